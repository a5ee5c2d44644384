#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "ndarchive/augment.hpp"
#include "ndarchive/codec.hpp"
#include "ndarchive/corpus.hpp"
#include "ndarchive/image.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ndarchive;

namespace {

Matrix random_matrix(std::size_t n, Rng& rng) {
  Matrix m(n, n);
  for (auto& v : m.values) v = rng.uniform();
  return m;
}

double reference_bilinear(const ImageGray& img, std::size_t ox, std::size_t oy, std::size_t ow, std::size_t oh) {
  auto src = [](std::size_t o, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::min(std::max(s, 0.0), static_cast<double>(in - 1));
  };
  const double sx = src(ox, img.width(), ow), sy = src(oy, img.height(), oh);
  const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
  const auto x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = sx - x0, fy = sy - y0;
  return (1 - fy) * ((1 - fx) * img(x0, y0) + fx * img(x1, y0)) + fy * ((1 - fx) * img(x0, y1) + fx * img(x1, y1));
}

}  // namespace

TEST(Grayscale, LumaWeights) {
  const std::vector<std::uint8_t> rgb{255, 255, 255, 0, 0, 0, 255, 0, 0};
  const auto g = to_grayscale(rgb, 3, 1);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(1, 0), 0.0);
  EXPECT_NEAR(g(2, 0), 0.299, 1e-12);
}

TEST(Image, RejectsOutOfRangeAndEmpty) {
  EXPECT_THROW(ImageGray(0, 4), Error);
  EXPECT_THROW(ImageGray(2, 1, std::vector<double>{0.5, 1.5}), Error);
  EXPECT_THROW(ImageGray(2, 1, std::vector<double>{0.5, std::nan("")}), Error);
  EXPECT_THROW(ImageGray(2, 2, std::vector<double>{0.5}), Error);
}

TEST(Resize, ConstantStaysConstant) {
  const ImageGray img(17, 9, 0.37);
  for (auto m : {Interpolation::area, Interpolation::bilinear})
    for (auto [w, h] : {std::pair{5, 3}, {32, 32}, {1, 1}, {40, 7}}) {
      const auto out = resize(img, w, h, m);
      for (double v : out.pixels()) EXPECT_NEAR(v, 0.37, 1e-12);
    }
}

TEST(Resize, AreaIntegralScaleAveragesBlocks) {
  std::vector<double> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<double>(i) / 16.0;
  const ImageGray img(4, 4, px);
  const auto out = resize(img, 2, 2, Interpolation::area);
  for (std::size_t by = 0; by < 2; ++by)
    for (std::size_t bx = 0; bx < 2; ++bx) {
      const double mean =
          (img(2 * bx, 2 * by) + img(2 * bx + 1, 2 * by) + img(2 * bx, 2 * by + 1) + img(2 * bx + 1, 2 * by + 1)) / 4;
      EXPECT_NEAR(out(bx, by), mean, 1e-12);
    }
}

TEST(Resize, BilinearMatchesReference) {
  const auto img = ndtest::ramp(32, 32);
  const auto out = resize(img, 8, 8, Interpolation::bilinear);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_NEAR(out(x, y), reference_bilinear(img, x, y, 8, 8), 1e-9);
  Rng rng(3);
  const auto noisy = ndtest::random_image(23, 11, rng);
  const auto up = resize(noisy, 37, 29, Interpolation::bilinear);
  for (std::size_t y = 0; y < 29; ++y)
    for (std::size_t x = 0; x < 37; ++x) EXPECT_NEAR(up(x, y), reference_bilinear(noisy, x, y, 37, 29), 1e-9);
}

TEST(Dct, ConstantIsDcOnly) {
  const std::size_t n = 16;
  const auto c = dct2d(ImageGray(n, n, 0.25));
  EXPECT_NEAR(c(0, 0), n * 0.25, 1e-12);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u || v) EXPECT_NEAR(c(u, v), 0.0, 1e-12);
}

TEST(Dct, MatchesNaiveOracle) {
  Rng rng(11);
  for (std::size_t n : {8, 32})
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = random_matrix(n, rng);
      const auto fast = dct2d(x), slow = oracle::naive_dct(x);
      for (std::size_t i = 0; i < fast.values.size(); ++i) ASSERT_NEAR(fast.values[i], slow.values[i], 1e-9);
    }
}

TEST(Dct, RowAndColumnFrequencyOrientation) {
  // Vertical-only variation lands in column 0 (row frequencies).
  ImageGray img(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img(x, y) = y < 4 ? 1.0 : 0.0;
  const auto c = dct2d(img);
  EXPECT_GT(std::abs(c(1, 0)), 1.0);
  EXPECT_NEAR(c(0, 1), 0.0, 1e-12);
}

TEST(Dct, InverseAndParsevalProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(63);
    const auto x = random_matrix(n, rng);
    const auto c = dct2d(x);
    const auto back = idct2d(c);
    double ex = 0.0, ec = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      ASSERT_NEAR(back.values[i], x.values[i], 1e-9) << "n=" << n;
      ex += x.values[i] * x.values[i];
      ec += c.values[i] * c.values[i];
    }
    ASSERT_NEAR(ex, ec, 1e-9 * std::max(1.0, ex)) << "n=" << n;
  }
}

TEST(Dct, RejectsNonSquare) {
  EXPECT_THROW(dct2d(ImageGray(4, 5)), Error);
  EXPECT_THROW(dct2d(Matrix(1, 1)), Error);
}

TEST(Augment, FlipIsInvolution) {
  Rng rng(1);
  const auto img = ndtest::random_image(13, 7, rng);
  AugmentationSpec spec{AugmentationKind::horizontal_flip, {}, 4};
  spec.params.flip_probability = 1.0;
  const auto once = augment(img, spec);
  EXPECT_FALSE(once == img);
  EXPECT_TRUE(augment(once, spec) == img);
}

TEST(Augment, BlurOfConstantIsConstant) {
  const ImageGray img(20, 12, 0.6);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto out = augment(img, {AugmentationKind::gaussian_blur, {}, seed});
    for (double v : out.pixels()) EXPECT_NEAR(v, 0.6, 1e-9);
  }
}

TEST(Augment, FullFrameCropIsIdentity) {
  Rng rng(2);
  const auto img = ndtest::random_image(24, 24, rng);
  AugmentationSpec spec{AugmentationKind::crop_and_resize, {}, 9};
  spec.params.crop_scale_min = spec.params.crop_scale_max = 1.0;
  spec.params.crop_aspect_min = spec.params.crop_aspect_max = 1.0;
  const auto out = augment(img, spec);
  for (std::size_t i = 0; i < out.pixels().size(); ++i) EXPECT_NEAR(out.pixels()[i], img.pixels()[i], 1e-9);
}

TEST(Augment, OutputsStayInRangeAndKeepShape) {
  Rng rng(77);
  AugmentationPolicy policy;
  policy.color_probability = policy.blur_probability = 1.0;
  policy.params.grayscale_probability = 0.5;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t w = 4 + rng.below(40), h = 4 + rng.below(40);
    const auto img = ndtest::random_image(w, h, rng);
    const auto kind = static_cast<AugmentationKind>(rng.below(5));
    const auto out = augment(img, {kind, policy.params, rng.next()});
    ASSERT_EQ(out.width(), w);
    ASSERT_EQ(out.height(), h);
    for (double v : out.pixels()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    const auto view = augment_view(img, policy, rng.next());
    ASSERT_EQ(view.width(), w);
    for (double v : view.pixels()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Augment, DeterministicAndNamed) {
  Rng rng(8);
  const auto img = ndtest::random_image(16, 16, rng);
  EXPECT_TRUE(augment_view(img, {}, 42) == augment_view(img, {}, 42));
  for (auto k : {AugmentationKind::horizontal_flip, AugmentationKind::crop_and_resize,
                 AugmentationKind::color_distortion, AugmentationKind::grayscale_jitter,
                 AugmentationKind::gaussian_blur})
    EXPECT_EQ(parse_augmentation_kind(to_string(k)), k);
  EXPECT_THROW(parse_augmentation_kind("solarize"), Error);
  AugmentationParams bad;
  bad.blur_sigma_min = 0.0;
  EXPECT_THROW(augment(img, {AugmentationKind::gaussian_blur, bad, 1}), Error);
}

TEST(Corpus, SingleGroup) {
  SyntheticCorpusSpec spec;
  spec.group_count = 1;
  spec.duplicates_per_group = 4;
  const auto c = generate_corpus(spec);
  ASSERT_EQ(c.images.size(), 4u);
  for (const auto& r : c.manifest.records) EXPECT_EQ(r.group_id, 0);
}

TEST(Corpus, SplitsPartitionGroups) {
  SyntheticCorpusSpec spec;
  spec.group_count = 10;
  spec.image_size = 16;
  const auto c = generate_corpus(spec);
  std::map<Split, std::set<std::int64_t>> groups;
  std::map<std::int64_t, std::set<Split>> splits_of;
  for (const auto& r : c.manifest.records) {
    groups[r.split].insert(*r.group_id);
    splits_of[*r.group_id].insert(r.split);
  }
  EXPECT_EQ(groups[Split::train].size(), 6u);
  EXPECT_EQ(groups[Split::val].size(), 2u);
  EXPECT_EQ(groups[Split::test].size(), 2u);
  for (const auto& [g, s] : splits_of) EXPECT_EQ(s.size(), 1u) << "group " << g << " straddles splits";
}

TEST(Corpus, PureFunctionOfSpec) {
  SyntheticCorpusSpec spec;
  spec.group_count = 6;
  spec.image_size = 24;
  spec.seed = 99;
  const auto a = generate_corpus(spec), b = generate_corpus(spec);
  EXPECT_EQ(a.manifest.to_tsv(), b.manifest.to_tsv());
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_TRUE(a.images[i] == b.images[i]);
  spec.seed = 100;
  EXPECT_FALSE(generate_corpus(spec).images[0] == a.images[0]);
}

TEST(Corpus, ExactStrengthCopiesBase) {
  SyntheticCorpusSpec spec;
  spec.group_count = 3;
  spec.image_size = 16;
  spec.strength = VariantStrength::exact;
  const auto c = generate_corpus(spec);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t m = 1; m < 4; ++m) EXPECT_TRUE(c.images[4 * g + m] == c.images[4 * g]);
}

TEST(Codec, PngRoundTripAndJpegDecodes) {
  ndtest::TempDir dir;
  const auto img = ndtest::ramp(20, 10);
  write_file(dir / "a.png", encode_png(img));
  const auto back = load_gray(dir / "a.png");
  ASSERT_EQ(back.width(), 20u);
  for (std::size_t i = 0; i < img.pixels().size(); ++i) EXPECT_NEAR(back.pixels()[i], img.pixels()[i], 0.5 / 255 + 1e-9);
  const auto jpeg = encode_jpeg(img, 95);
  EXPECT_EQ(sniff_format(jpeg), ImageFormat::jpeg);
  const auto j = decode_gray(jpeg);
  EXPECT_EQ(j.height(), 10u);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4};
  EXPECT_THROW(decode_gray(junk), Error);
}
