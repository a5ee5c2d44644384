#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/error.hpp"
#include "ndarchive/image.hpp"
#include "ndarchive/rng.hpp"

namespace ndarchive {

enum class AugmentationKind { horizontal_flip, crop_and_resize, color_distortion, grayscale_jitter, gaussian_blur };

inline std::string_view to_string(AugmentationKind kind) {
  switch (kind) {
    case AugmentationKind::horizontal_flip: return "horizontal-flip";
    case AugmentationKind::crop_and_resize: return "crop-and-resize";
    case AugmentationKind::color_distortion: return "color-distortion";
    case AugmentationKind::grayscale_jitter: return "grayscale-jitter";
    case AugmentationKind::gaussian_blur: return "gaussian-blur";
  }
  return "?";
}

inline AugmentationKind parse_augmentation_kind(std::string_view name) {
  for (auto k : {AugmentationKind::horizontal_flip, AugmentationKind::crop_and_resize,
                 AugmentationKind::color_distortion, AugmentationKind::grayscale_jitter,
                 AugmentationKind::gaussian_blur}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorKind::invalid_input, "unknown augmentation kind '" + std::string(name) + "'");
}

/// Parameter ranges for every augmentation kind. Each kind reads only its
/// own fields; random draws come from the spec seed.
struct AugmentationParams {
  double flip_probability = 0.5;
  // Crop area as a fraction of the frame, and aspect ratio (w/h) range.
  double crop_scale_min = 0.6;
  double crop_scale_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;
  // Color distortion on gray: brightness offset, contrast factor, gamma.
  double brightness = 0.2;
  double contrast = 0.2;
  double gamma_min = 0.8;
  double gamma_max = 1.25;
  // Grayscale jitter: with this probability the tonal range is collapsed
  // to `grayscale_levels` levels, the gray analogue of dropping chroma.
  double grayscale_probability = 0.2;
  int grayscale_levels = 8;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.5;

  void validate() const {
    require(flip_probability >= 0.0 && flip_probability <= 1.0, "flip probability outside [0,1]");
    require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
            "crop scale range must lie within (0,1]");
    require(crop_aspect_min > 0.0 && crop_aspect_min <= crop_aspect_max, "invalid crop aspect range");
    require(brightness >= 0.0 && contrast >= 0.0 && contrast < 1.0, "distortion strengths must be >= 0");
    require(gamma_min > 0.0 && gamma_min <= gamma_max, "invalid gamma range");
    require(grayscale_probability >= 0.0 && grayscale_probability <= 1.0, "grayscale probability outside [0,1]");
    require(grayscale_levels >= 2, "grayscale levels must be >= 2");
    require(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max, "blur sigma must be > 0");
  }
};

struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::horizontal_flip;
  AugmentationParams params;
  std::uint64_t seed = 0;
};

namespace detail {

inline ImageGray flip_horizontal(const ImageGray& img) {
  ImageGray out = img;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) out(x, y) = img(img.width() - 1 - x, y);
  return out;
}

inline ImageGray gaussian_blur(const ImageGray& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const auto w = static_cast<long>(img.width());
  const auto h = static_cast<long>(img.height());
  auto at = [](long v, long n) { return static_cast<std::size_t>(std::clamp(v, 0L, n - 1)); };
  ImageGray tmp = img;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img(at(x + k, w), at(y, h));
      tmp(at(x, w), at(y, h)) = acc;
    }
  ImageGray out = img;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(at(x, w), at(y + k, h));
      out(at(x, w), at(y, h)) = acc;
    }
  out.clamp();
  return out;
}

inline ImageGray crop_and_resize(const ImageGray& img, const AugmentationParams& p, Rng& rng) {
  const double area = rng.uniform(p.crop_scale_min, p.crop_scale_max);
  const double log_lo = std::log(p.crop_aspect_min);
  const double log_hi = std::log(p.crop_aspect_max);
  const double aspect = std::exp(rng.uniform(log_lo, log_hi));
  const double fw = static_cast<double>(img.width());
  const double fh = static_cast<double>(img.height());
  const double cw = std::min(fw, fw * std::sqrt(area * aspect));
  const double ch = std::min(fh, fh * std::sqrt(area / aspect));
  const double x0 = rng.uniform() * (fw - cw);
  const double y0 = rng.uniform() * (fh - ch);
  return resample_region(img, x0, y0, cw, ch, img.width(), img.height());
}

inline ImageGray color_distortion(const ImageGray& img, const AugmentationParams& p, Rng& rng) {
  const double gamma = std::exp(rng.uniform(std::log(p.gamma_min), std::log(p.gamma_max)));
  const double contrast = 1.0 + rng.uniform(-p.contrast, p.contrast);
  const double brightness = rng.uniform(-p.brightness, p.brightness);
  ImageGray out = img;
  double mean = 0.0;
  for (double v : out.pixels()) mean += std::pow(v, gamma);
  mean /= static_cast<double>(out.pixels().size());
  for (double& v : out.pixels()) v = (std::pow(v, gamma) - mean) * contrast + mean + brightness;
  out.clamp();
  return out;
}

inline ImageGray grayscale_jitter(const ImageGray& img, const AugmentationParams& p, Rng& rng) {
  if (!rng.bernoulli(p.grayscale_probability)) return img;
  ImageGray out = img;
  const double levels = static_cast<double>(p.grayscale_levels - 1);
  for (double& v : out.pixels()) v = std::round(v * levels) / levels;
  return out;
}

}  // namespace detail

/// Applies one augmentation. Deterministic in (img, spec); output has the
/// input's dimensions and stays in [0,1].
inline ImageGray augment(const ImageGray& img, const AugmentationSpec& spec) {
  spec.params.validate();
  Rng rng(spec.seed);
  switch (spec.kind) {
    case AugmentationKind::horizontal_flip:
      return rng.bernoulli(spec.params.flip_probability) ? detail::flip_horizontal(img) : img;
    case AugmentationKind::crop_and_resize:
      return detail::crop_and_resize(img, spec.params, rng);
    case AugmentationKind::color_distortion:
      return detail::color_distortion(img, spec.params, rng);
    case AugmentationKind::grayscale_jitter:
      return detail::grayscale_jitter(img, spec.params, rng);
    case AugmentationKind::gaussian_blur:
      return detail::gaussian_blur(img, rng.uniform(spec.params.blur_sigma_min, spec.params.blur_sigma_max));
  }
  fail(ErrorKind::invalid_input, "unknown augmentation kind");
}

/// The five-transform view pipeline used for contrastive training:
/// flip, crop-and-resize, color distortion (applied with
/// `color_probability`), grayscale jitter, blur (with `blur_probability`).
struct AugmentationPolicy {
  AugmentationParams params;
  double color_probability = 0.8;
  double blur_probability = 0.5;
};

inline ImageGray augment_view(const ImageGray& img, const AugmentationPolicy& policy, std::uint64_t seed) {
  Rng gate(Rng::derive(seed, 99));
  ImageGray out = img;
  auto step = [&](AugmentationKind kind, std::uint64_t salt) {
    out = augment(out, AugmentationSpec{kind, policy.params, Rng::derive(seed, salt)});
  };
  step(AugmentationKind::horizontal_flip, 0);
  step(AugmentationKind::crop_and_resize, 1);
  if (gate.bernoulli(policy.color_probability)) step(AugmentationKind::color_distortion, 2);
  step(AugmentationKind::grayscale_jitter, 3);
  if (gate.bernoulli(policy.blur_probability)) step(AugmentationKind::gaussian_blur, 4);
  return out;
}

}  // namespace ndarchive
