#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/error.hpp"
#include "ndarchive/image.hpp"

namespace ndarchive {

enum class HashAlgorithm { average, phash, blockmean };

inline std::string_view to_string(HashAlgorithm a) {
  switch (a) {
    case HashAlgorithm::average: return "average";
    case HashAlgorithm::phash: return "phash";
    case HashAlgorithm::blockmean: return "blockmean";
  }
  return "?";
}

inline HashAlgorithm parse_hash_algorithm(std::string_view s) {
  if (s == "average") return HashAlgorithm::average;
  if (s == "phash") return HashAlgorithm::phash;
  if (s == "blockmean") return HashAlgorithm::blockmean;
  fail(ErrorKind::invalid_input, "unknown hash algorithm '" + std::string(s) + "'");
}

inline constexpr std::size_t hash_bits(HashAlgorithm a) { return a == HashAlgorithm::blockmean ? 256 : 64; }

// Values within this distance of the threshold are ties and map to 0, so
// round-off in the resize/DCT cannot set bits on flat regions.
inline constexpr double kHashTieTolerance = 1e-12;

// pHash threshold statistic over the 8x8 low-frequency block.
enum class PhashThreshold { median_with_dc, mean_without_dc };
inline constexpr PhashThreshold kPhashThreshold = PhashThreshold::median_with_dc;

/// Fixed-length bit signature. Bits are row-major, most significant bit
/// first within each byte.
class PerceptualHash {
 public:
  explicit PerceptualHash(HashAlgorithm algorithm)
      : algorithm_(algorithm), bytes_(hash_bits(algorithm) / 8, 0) {}

  HashAlgorithm algorithm() const noexcept { return algorithm_; }
  std::size_t size() const noexcept { return bytes_.size() * 8; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  bool bit(std::size_t i) const { return (bytes_.at(i / 8) >> (7 - i % 8)) & 1u; }
  void set(std::size_t i, bool value) {
    const auto mask = static_cast<std::uint8_t>(0x80u >> (i % 8));
    if (value) bytes_.at(i / 8) |= mask; else bytes_.at(i / 8) &= static_cast<std::uint8_t>(~mask);
  }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto b : bytes_) n += static_cast<std::size_t>(std::popcount(b));
    return n;
  }

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (auto b : bytes_) {
      s += digits[b >> 4];
      s += digits[b & 15];
    }
    return s;
  }

  /// `algorithm:hex`, e.g. `phash:f0e1...`.
  std::string to_string() const { return std::string(ndarchive::to_string(algorithm_)) + ":" + hex(); }

  static PerceptualHash parse(std::string_view text) {
    const auto colon = text.find(':');
    require(colon != std::string_view::npos, "hash string lacks algorithm tag");
    PerceptualHash h(parse_hash_algorithm(text.substr(0, colon)));
    const auto hex = text.substr(colon + 1);
    require(hex.size() == h.bytes_.size() * 2, "hash hex length does not match algorithm");
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      fail(ErrorKind::invalid_input, "hash hex must be lowercase hexadecimal");
    };
    for (std::size_t i = 0; i < h.bytes_.size(); ++i)
      h.bytes_[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return h;
  }

  static PerceptualHash from_bytes(HashAlgorithm algorithm, std::vector<std::uint8_t> bytes) {
    PerceptualHash h(algorithm);
    require(bytes.size() == h.bytes_.size(), "hash byte length does not match algorithm");
    h.bytes_ = std::move(bytes);
    return h;
  }

  friend bool operator==(const PerceptualHash&, const PerceptualHash&) = default;

 private:
  HashAlgorithm algorithm_;
  std::vector<std::uint8_t> bytes_;
};

namespace detail {

// Median as the mean of the two central order statistics (even counts).
inline double median(std::vector<double> values) {
  const auto n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline PerceptualHash threshold_bits(HashAlgorithm algorithm, const std::vector<double>& values, double threshold) {
  PerceptualHash h(algorithm);
  for (std::size_t i = 0; i < values.size(); ++i) h.set(i, values[i] > threshold + kHashTieTolerance);
  return h;
}

}  // namespace detail

inline PerceptualHash average_hash(const ImageGray& img) {
  const ImageGray small = resize(img, 8, 8, Interpolation::area);
  std::vector<double> px(small.pixels().begin(), small.pixels().end());
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= 64.0;
  return detail::threshold_bits(HashAlgorithm::average, px, mean);
}

inline PerceptualHash phash(const ImageGray& img, PhashThreshold rule = kPhashThreshold) {
  const Matrix coeffs = dct2d(resize(img, 32, 32, Interpolation::area));
  std::vector<double> low(64);
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) low[u * 8 + v] = coeffs(u, v);
  double threshold = 0.0;
  if (rule == PhashThreshold::median_with_dc) {
    threshold = detail::median(low);
  } else {
    for (std::size_t i = 1; i < 64; ++i) threshold += low[i];
    threshold /= 63.0;
  }
  return detail::threshold_bits(HashAlgorithm::phash, low, threshold);
}

inline PerceptualHash blockmean_hash(const ImageGray& img) {
  constexpr std::size_t side = 256, grid = 16, block = side / grid;
  const ImageGray big = resize(img, side, side, Interpolation::area);
  std::vector<double> means(grid * grid, 0.0);
  for (std::size_t by = 0; by < grid; ++by)
    for (std::size_t bx = 0; bx < grid; ++bx) {
      double acc = 0.0;
      for (std::size_t y = by * block; y < (by + 1) * block; ++y)
        for (std::size_t x = bx * block; x < (bx + 1) * block; ++x) acc += big(x, y);
      means[by * grid + bx] = acc / static_cast<double>(block * block);
    }
  return detail::threshold_bits(HashAlgorithm::blockmean, means, detail::median(means));
}

inline PerceptualHash compute_hash(const ImageGray& img, HashAlgorithm algorithm) {
  switch (algorithm) {
    case HashAlgorithm::average: return average_hash(img);
    case HashAlgorithm::phash: return phash(img);
    case HashAlgorithm::blockmean: return blockmean_hash(img);
  }
  fail(ErrorKind::invalid_input, "unknown hash algorithm");
}

struct HammingDistance {
  std::size_t raw = 0;
  double normalized = 0.0;
};

inline HammingDistance hamming(const PerceptualHash& a, const PerceptualHash& b) {
  if (a.algorithm() != b.algorithm())
    fail(ErrorKind::incomparable_hash,
         std::string(to_string(a.algorithm())) + " vs " + std::string(to_string(b.algorithm())));
  std::size_t raw = 0;
  for (std::size_t i = 0; i < a.bytes().size(); ++i)
    raw += static_cast<std::size_t>(std::popcount(static_cast<std::uint8_t>(a.bytes()[i] ^ b.bytes()[i])));
  return {raw, static_cast<double>(raw) / static_cast<double>(a.size())};
}

}  // namespace ndarchive
