#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ndarchive/error.hpp"

namespace ndarchive {

/// Grayscale raster, row-major, intensities in [0,1].
class ImageGray {
 public:
  ImageGray() = default;

  ImageGray(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), data_(width * height, fill) {
    require(width >= 1 && height >= 1, "image dimensions must be >= 1");
    require(std::isfinite(fill) && fill >= 0.0 && fill <= 1.0, "fill intensity outside [0,1]");
  }

  ImageGray(std::size_t width, std::size_t height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    require(width >= 1 && height >= 1, "image dimensions must be >= 1");
    require(data_.size() == width * height, "pixel count does not match dimensions");
    for (double v : data_) require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "intensity outside [0,1]");
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }
  double& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }

  std::span<const double> pixels() const noexcept { return data_; }
  std::span<double> pixels() noexcept { return data_; }

  // Restores the [0,1] invariant after arithmetic on pixels().
  void clamp() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const ImageGray&, const ImageGray&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

/// Dense row-major matrix of doubles (DCT coefficients and friends).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

// BT.601 luma weights.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

/// Converts an interleaved 8-bit RGB raster (3 bytes per pixel) to gray.
inline ImageGray to_grayscale(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height) {
  require(width >= 1 && height >= 1, "zero-dimension raster");
  require(rgb.size() == width * height * 3, "RGB buffer size does not match dimensions");
  std::vector<double> out(width * height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = (kLumaR * rgb[3 * i] + kLumaG * rgb[3 * i + 1] + kLumaB * rgb[3 * i + 2]) / 255.0;
    out[i] = std::clamp(y, 0.0, 1.0);
  }
  return ImageGray(width, height, std::move(out));
}

enum class Interpolation { area, bilinear };

namespace detail {

// Per-output-cell overlap weights along one axis for area resampling.
struct AreaTap {
  std::size_t first = 0;
  std::vector<double> weights;
};

inline std::vector<AreaTap> area_taps(std::size_t in, std::size_t out) {
  std::vector<AreaTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = static_cast<double>(o) * scale;
    const double hi = static_cast<double>(o + 1) * scale;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
    taps[o].first = first;
    for (std::size_t i = first; i < last; ++i) {
      const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      taps[o].weights.push_back(overlap / scale);
    }
  }
  return taps;
}

inline ImageGray resize_area(const ImageGray& img, std::size_t out_w, std::size_t out_h) {
  const auto tx = area_taps(img.width(), out_w);
  const auto ty = area_taps(img.height(), out_h);
  // Horizontal pass into a width-reduced buffer, then vertical.
  std::vector<double> tmp(out_w * img.height());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double acc = 0.0;
      for (std::size_t k = 0; k < tx[ox].weights.size(); ++k) acc += tx[ox].weights[k] * img(tx[ox].first + k, y);
      tmp[y * out_w + ox] = acc;
    }
  }
  std::vector<double> out(out_w * out_h);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ty[oy].weights.size(); ++k) acc += ty[oy].weights[k] * tmp[(ty[oy].first + k) * out_w + ox];
      out[oy * out_w + ox] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return ImageGray(out_w, out_h, std::move(out));
}

// Half-pixel-centre mapping with edge clamping.
inline double bilinear_sample(const ImageGray& img, double sx, double sy) {
  const double maxx = static_cast<double>(img.width() - 1);
  const double maxy = static_cast<double>(img.height() - 1);
  sx = std::clamp(sx, 0.0, maxx);
  sy = std::clamp(sy, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = sx - static_cast<double>(x0);
  const double fy = sy - static_cast<double>(y0);
  const double top = img(x0, y0) * (1.0 - fx) + img(x1, y0) * fx;
  const double bottom = img(x0, y1) * (1.0 - fx) + img(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

}  // namespace detail

/// Resamples a sub-rectangle [x0, x0+w) x [y0, y0+h) of the source (in
/// continuous pixel coordinates) onto an out_w x out_h grid, bilinearly.
inline ImageGray resample_region(const ImageGray& img, double x0, double y0, double w, double h,
                                 std::size_t out_w, std::size_t out_h) {
  require(out_w >= 1 && out_h >= 1, "zero target dimension");
  require(w > 0.0 && h > 0.0, "empty source region");
  std::vector<double> out(out_w * out_h);
  const double sx = w / static_cast<double>(out_w);
  const double sy = h / static_cast<double>(out_h);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double py = y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double px = x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5;
      out[oy * out_w + ox] = std::clamp(detail::bilinear_sample(img, px, py), 0.0, 1.0);
    }
  }
  return ImageGray(out_w, out_h, std::move(out));
}

inline ImageGray resize(const ImageGray& img, std::size_t out_w, std::size_t out_h,
                        Interpolation method = Interpolation::area) {
  require(!img.empty(), "empty image");
  require(out_w >= 1 && out_h >= 1, "zero target dimension");
  if (method == Interpolation::area) return detail::resize_area(img, out_w, out_h);
  return resample_region(img, 0.0, 0.0, static_cast<double>(img.width()), static_cast<double>(img.height()), out_w,
                         out_h);
}

namespace detail {

// Orthonormal DCT-II basis: row u holds alpha(u) cos(pi (2x+1) u / 2N).
inline Matrix dct_basis(std::size_t n) {
  Matrix basis(n, n);
  const double nd = static_cast<double>(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double alpha = u == 0 ? std::sqrt(1.0 / nd) : std::sqrt(2.0 / nd);
    for (std::size_t x = 0; x < n; ++x) {
      basis(u, x) = alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(x) + 1.0) *
                                     static_cast<double>(u) / (2.0 * nd));
    }
  }
  return basis;
}

// out = a * b  (or a^T * b when transpose_a).
inline Matrix matmul(const Matrix& a, const Matrix& b, bool transpose_a = false, bool transpose_b = false) {
  const std::size_t m = transpose_a ? a.cols : a.rows;
  const std::size_t k = transpose_a ? a.rows : a.cols;
  const std::size_t n = transpose_b ? b.rows : b.cols;
  Matrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = transpose_a ? a(p, i) : a(i, p);
        const double bv = transpose_b ? b(j, p) : b(p, j);
        acc += av * bv;
      }
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Orthonormal 2-D DCT-II. Entry (u, v) pairs row frequency u with
/// column frequency v.
inline Matrix dct2d(const Matrix& signal) {
  require(signal.rows == signal.cols, "DCT input must be square");
  require(signal.rows >= 2, "DCT input side must be >= 2");
  const Matrix basis = detail::dct_basis(signal.rows);
  return detail::matmul(detail::matmul(basis, signal), basis, false, true);
}

inline Matrix dct2d(const ImageGray& img) {
  require(img.width() == img.height(), "DCT input must be square");
  Matrix m(img.height(), img.width());
  std::copy(img.pixels().begin(), img.pixels().end(), m.values.begin());
  return dct2d(m);
}

/// Inverse of dct2d (DCT-III with the same orthonormal scaling).
inline Matrix idct2d(const Matrix& coeffs) {
  require(coeffs.rows == coeffs.cols, "DCT input must be square");
  require(coeffs.rows >= 2, "DCT input side must be >= 2");
  const Matrix basis = detail::dct_basis(coeffs.rows);
  return detail::matmul(detail::matmul(basis, coeffs, true), basis);
}

}  // namespace ndarchive
