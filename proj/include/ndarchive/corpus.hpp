#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ndarchive/augment.hpp"
#include "ndarchive/image.hpp"
#include "ndarchive/manifest.hpp"
#include "ndarchive/rng.hpp"

namespace ndarchive {

/// How far generated near-duplicates drift from their base image.
enum class VariantStrength { exact, mild, strong };

inline std::string_view to_string(VariantStrength s) {
  switch (s) {
    case VariantStrength::exact: return "exact";
    case VariantStrength::mild: return "mild";
    case VariantStrength::strong: return "strong";
  }
  return "?";
}

inline VariantStrength parse_variant_strength(std::string_view s) {
  if (s == "exact") return VariantStrength::exact;
  if (s == "mild") return VariantStrength::mild;
  if (s == "strong") return VariantStrength::strong;
  fail(ErrorKind::invalid_input, "unknown variant strength '" + std::string(s) + "'");
}

struct SyntheticCorpusSpec {
  std::size_t group_count = 100;
  std::size_t duplicates_per_group = 4;
  std::size_t image_size = 64;
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  VariantStrength strength = VariantStrength::mild;

  void validate() const {
    require(group_count >= 1, "group_count must be >= 1");
    require(duplicates_per_group >= 1, "duplicates_per_group must be >= 1");
    require(image_size >= 8, "image_size must be >= 8");
    for (double f : split_fractions) require(f >= 0.0 && f <= 1.0, "split fraction outside [0,1]");
    const double sum = split_fractions[0] + split_fractions[1] + split_fractions[2];
    require(std::abs(sum - 1.0) <= 1e-9, "split fractions must sum to 1");
  }
};

struct SyntheticCorpus {
  std::vector<ImageGray> images;  // parallel to manifest.records
  CorpusManifest manifest;
};

namespace detail {

inline ImageGray synth_base_image(std::size_t size, Rng& rng) {
  ImageGray img(size, size);
  const double s = static_cast<double>(size);
  // Background: a linear gradient in a random direction.
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double g0 = rng.uniform(0.1, 0.9);
  const double g1 = rng.uniform(0.1, 0.9);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 0.5 + ((static_cast<double>(x) / s - 0.5) * dx + (static_cast<double>(y) / s - 0.5) * dy);
      img(x, y) = g0 + (g1 - g0) * std::clamp(t, 0.0, 1.0);
    }

  const auto shapes = 2 + rng.below(4);  // 2..5
  for (std::uint64_t k = 0; k < shapes; ++k) {
    const auto kind = rng.below(3);
    const double cx = rng.uniform(0.1, 0.9) * s;
    const double cy = rng.uniform(0.1, 0.9) * s;
    const double rx = rng.uniform(0.08, 0.35) * s;
    const double ry = rng.uniform(0.08, 0.35) * s;
    const double value = rng.uniform(0.0, 1.0);
    const double value2 = rng.uniform(0.0, 1.0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double py = (static_cast<double>(y) + 0.5 - cy) / ry;
        switch (kind) {
          case 0:  // rectangle
            if (std::abs(px) <= 1.0 && std::abs(py) <= 1.0) img(x, y) = value;
            break;
          case 1:  // ellipse
            if (px * px + py * py <= 1.0) img(x, y) = value;
            break;
          default:  // rectangle filled with a horizontal gradient
            if (std::abs(px) <= 1.0 && std::abs(py) <= 1.0) img(x, y) = value + (value2 - value) * 0.5 * (px + 1.0);
            break;
        }
      }
  }
  for (double& v : img.pixels()) v += 0.02 * rng.normal();
  img.clamp();
  return img;
}

// Transforms that turn a base image into one of its near-duplicates.
inline AugmentationPolicy variant_policy(VariantStrength strength) {
  AugmentationPolicy p;
  p.params.flip_probability = 0.0;
  p.params.grayscale_probability = 0.0;
  if (strength == VariantStrength::strong) {
    p.params.crop_scale_min = 0.3;
    p.params.crop_scale_max = 0.5;
    p.params.crop_aspect_min = 0.8;
    p.params.crop_aspect_max = 1.25;
    p.params.brightness = 0.15;
    p.params.contrast = 0.2;
    p.params.gamma_min = 0.8;
    p.params.gamma_max = 1.25;
    p.params.blur_sigma_min = 1.5;
    p.params.blur_sigma_max = 3.0;
    p.color_probability = 1.0;
    p.blur_probability = 1.0;
  } else {
    p.params.crop_scale_min = 0.65;
    p.params.crop_scale_max = 0.9;
    p.params.crop_aspect_min = 0.9;
    p.params.crop_aspect_max = 1.1;
    p.params.brightness = 0.12;
    p.params.contrast = 0.15;
    p.params.gamma_min = 0.85;
    p.params.gamma_max = 1.2;
    p.params.blur_sigma_min = 0.4;
    p.params.blur_sigma_max = 1.0;
    p.color_probability = 1.0;
    p.blur_probability = 0.5;
  }
  return p;
}

inline std::string group_image_id(std::size_t group, std::size_t member) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "g%05zu_%zu", group, member);
  return buf;
}

}  // namespace detail

/// Number of groups assigned to each split: train and val are rounded,
/// test takes the remainder.
inline std::array<std::size_t, 3> split_group_counts(std::size_t groups, const std::array<double, 3>& fractions) {
  const auto g = static_cast<double>(groups);
  auto train = static_cast<std::size_t>(std::llround(fractions[0] * g));
  auto val = static_cast<std::size_t>(std::llround(fractions[1] * g));
  train = std::min(train, groups);
  val = std::min(val, groups - train);
  return {train, val, groups - train - val};
}

/// Generates a UKBench-style corpus: each group is one base image plus
/// (duplicates_per_group - 1) transformed copies. Splits partition groups,
/// so near-duplicates never straddle splits. Pure function of the spec.
inline SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  const auto counts = split_group_counts(spec.group_count, spec.split_fractions);
  std::vector<std::size_t> order(spec.group_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(Rng::derive(spec.seed, 0x5b1));
  split_rng.shuffle(order.begin(), order.end());
  std::vector<Split> group_split(spec.group_count);
  for (std::size_t i = 0; i < order.size(); ++i)
    group_split[order[i]] = i < counts[0] ? Split::train : i < counts[0] + counts[1] ? Split::val : Split::test;

  const auto policy = detail::variant_policy(spec.strength);
  for (std::size_t g = 0; g < spec.group_count; ++g) {
    Rng rng(Rng::derive(spec.seed, 2 * g + 1));
    const ImageGray base = detail::synth_base_image(spec.image_size, rng);
    for (std::size_t m = 0; m < spec.duplicates_per_group; ++m) {
      ImageGray img = base;
      if (m > 0 && spec.strength != VariantStrength::exact) {
        img = augment_view(base, policy, Rng::derive(spec.seed, 2 * g + 2 + 0x10000 * m));
        Rng noise(Rng::derive(spec.seed, 0x7000000 + g * 16 + m));
        for (double& v : img.pixels()) v += 0.01 * noise.normal();
        img.clamp();
      }
      const auto id = detail::group_image_id(g, m);
      corpus.images.push_back(std::move(img));
      corpus.manifest.records.push_back(
          ManifestRecord{id, "images/" + id + ".png", static_cast<std::int64_t>(g), group_split[g]});
    }
  }
  return corpus;
}

}  // namespace ndarchive
