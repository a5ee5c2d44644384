#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "ndarchive/image.hpp"
#include "ndarchive/rng.hpp"

namespace ndtest {

inline ndarchive::ImageGray random_image(std::size_t w, std::size_t h, ndarchive::Rng& rng) {
  std::vector<double> px(w * h);
  for (auto& v : px) v = rng.uniform();
  return {w, h, std::move(px)};
}

inline ndarchive::ImageGray ramp(std::size_t w, std::size_t h) {
  ndarchive::ImageGray img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img(x, y) = static_cast<double>(x + y) / static_cast<double>(w + h - 2);
  return img;
}

// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ndarchive-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace ndtest
