#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "ndarchive/neural.hpp"
#include "support.hpp"

using namespace ndarchive;

namespace {

Model zeroed(Model m) {
  for (auto& t : m.params) std::fill(t.values.begin(), t.values.end(), 0.0);
  return m;
}

}  // namespace

TEST(Encoder, ZeroWeightsGiveBiases) {
  auto m = zeroed(init_mlp(ndtest::tiny_spec(), 1));
  auto& b2 = m.params.at("enc.b2").values;
  auto& b3 = m.params.at("proj.b").values;
  for (std::size_t i = 0; i < b2.size(); ++i) b2[i] = 0.1 * (i + 1);
  for (std::size_t i = 0; i < b3.size(); ++i) b3[i] = i % 2 ? 3.0 : -4.0;
  const auto out = encode(ImageGray(8, 8, 0.5), m);
  for (std::size_t i = 0; i < b2.size(); ++i) EXPECT_DOUBLE_EQ(out.h.values[i], b2[i]);
  double n = 0.0;
  for (double v : b3) n += v * v;
  for (std::size_t i = 0; i < b3.size(); ++i) EXPECT_NEAR(out.z.values[i], b3[i] / std::sqrt(n), 1e-15);
  EXPECT_FALSE(out.h.normalized);
  EXPECT_TRUE(out.z.normalized);
}

TEST(Encoder, ZeroProjectionIsDegenerate) {
  const auto m = zeroed(init_mlp(ndtest::tiny_spec(), 1));
  try {
    encode(ImageGray(8, 8, 0.5), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_embedding);
  }
}

TEST(Encoder, UnitNormAndDeterministic) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = init_mlp(ndtest::tiny_spec(), rng.next());
    const auto img = ndtest::random_image(8, 8, rng);
    const auto a = encode(img, m), b = encode(img, m);
    double n = 0.0;
    for (double v : a.z.values) n += v * v;
    ASSERT_NEAR(std::sqrt(n), 1.0, 1e-6);
    ASSERT_EQ(a.h.values, b.h.values);
    ASSERT_EQ(a.z.values, b.z.values);
  }
}

TEST(Encoder, RejectsWrongSize) {
  const auto m = init_mlp(ndtest::tiny_spec(), 1);
  EXPECT_THROW(encode(ImageGray(9, 8), m), Error);
  auto bad = ndtest::tiny_spec();
  bad.patch_size = 3;
  EXPECT_THROW(init_mae(bad, 1), Error);
}

TEST(MaskPlan, RatioAndIndices) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto plan = make_mask_plan(16, 0.75, rng);
    ASSERT_EQ(plan.masked_indices.size(), 12u);
    for (std::size_t i = 0; i < plan.masked_indices.size(); ++i) {
      ASSERT_LT(plan.masked_indices[i], 16u);
      if (i) ASSERT_LT(plan.masked_indices[i - 1], plan.masked_indices[i]);
    }
  }
}

TEST(Mae, ShapesAndFullMaskError) {
  EncoderSpec spec;  // 32x32 input, 8x8 patches
  const auto m = init_mae(spec, 2);
  Rng rng(4);
  const auto img = ndtest::random_image(32, 32, rng);
  const auto plan = make_mask_plan(spec.patch_count(), 0.75, rng);
  EXPECT_EQ(spec.patch_count(), 16u);
  const auto t = mae_forward(img, plan, m);
  ASSERT_EQ(t.reconstruction.size(), 16u);
  for (const auto& r : t.reconstruction) EXPECT_EQ(r.size(), 64u);
  EXPECT_GE(t.loss, 0.0);
  EXPECT_THROW(mae_forward(img, make_mask_plan(16, 1.0, rng), m), Error);
  EXPECT_THROW(mae_forward(img, make_mask_plan(16, 0.0, rng), m), Error);
  EXPECT_NO_THROW(mae_forward(img, make_mask_plan(16, 0.0, rng), m, MaeLossScope::all));
}

TEST(Mae, ZeroLossExactlyWhenReconstructionMatches) {
  auto spec = ndtest::tiny_spec();
  auto m = zeroed(init_mae(spec, 1));
  const ImageGray img(8, 8, 0.25);
  auto& bd = m.params.at("mae.dec_b").values;
  std::fill(bd.begin(), bd.end(), 0.25);
  Rng rng(1);
  const auto plan = make_mask_plan(spec.patch_count(), 0.75, rng);
  EXPECT_EQ(mae_forward(img, plan, m).loss, 0.0);
  bd[0] = 0.5;
  EXPECT_GT(mae_forward(img, plan, m, MaeLossScope::all).loss, 0.0);
}

TEST(Mae, EmbeddingIsPooledAndUnnormalized) {
  const auto m = init_mae(ndtest::tiny_spec(), 3);
  Rng rng(2);
  const auto e = mae_embed(ndtest::random_image(8, 8, rng), m);
  EXPECT_EQ(e.dim(), ndtest::tiny_spec().repr_dim);
  EXPECT_FALSE(e.normalized);
}

TEST(Backward, SquaredNormGradientIsExact) {
  auto m = init_mlp(ndtest::tiny_spec(), 5);
  m.params.zero_grad();
  squared_norm_loss(m);
  for (const auto& t : m.params)
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t.grad[i], 2.0 * t.values[i]);
}

TEST(Backward, EveryComposedLossMatchesFiniteDifferences) {
  for (auto& c : ndtest::composed_losses()) {
    const auto r = ndtest::gradient_check(c.model, c.loss);
    EXPECT_LT(r.worst_rel_error, 1e-4) << c.name << " worst at " << r.worst_param;
    EXPECT_EQ(r.checked, c.model.params.scalar_count());
  }
}

TEST(Backward, NonFiniteLossRaisesNumericFailure) {
  auto m = init_mae(ndtest::tiny_spec(), 1);
  Rng rng(1);
  const auto img = ndtest::random_image(8, 8, rng);
  m.params.at("mae.dec_b").values[0] = std::numeric_limits<double>::infinity();
  const auto t = mae_forward(img, make_mask_plan(4, 0.5, rng), m, MaeLossScope::all);
  EXPECT_THROW(mae_backward(t, m), NumericFailure);
}

TEST(Adam, ZeroLearningRateAndZeroGradientAreIdentity) {
  auto m = init_mlp(ndtest::tiny_spec(), 8);
  const auto before = m.params;
  auto state = AdamState::for_params(m.params);
  m.params.zero_grad();
  squared_norm_loss(m);
  adam_step(m.params, state, 0.0);
  m.params.zero_grad();
  auto fresh = AdamState::for_params(m.params);
  for (int i = 0; i < 5; ++i) adam_step(m.params, fresh, 0.1);
  for (std::size_t t = 0; t < m.params.size(); ++t) EXPECT_EQ(m.params[t].values, before[t].values);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  ParamSet p;
  p.add("x", {1});
  p[0].values[0] = 1.0;
  for (double g : {3.0, -0.02, 1e3}) {
    p[0].values[0] = 1.0;
    p[0].grad[0] = g;
    auto state = AdamState::for_params(p);
    adam_step(p, state, 0.01);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(p[0].values[0], 1.0 - 0.01 * (g > 0 ? 1 : -1), 1e-8 * 0.01 / std::abs(g) + 1e-15);
  }
}

TEST(Adam, NonFiniteGradientRaises) {
  ParamSet p;
  p.add("x", {2});
  p[0].grad[1] = std::nan("");
  auto state = AdamState::for_params(p);
  EXPECT_THROW(adam_step(p, state, 0.1), NumericFailure);
}

TEST(Schedule, StepDecayEveryEightEpochs) {
  EXPECT_DOUBLE_EQ(scheduled_lr(3e-4, 0.1, 8, 0), 3e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(3e-4, 0.1, 8, 7), 3e-4);
  EXPECT_NEAR(scheduled_lr(3e-4, 0.1, 8, 8), 3e-5, 1e-18);
  EXPECT_NEAR(scheduled_lr(3e-4, 0.1, 8, 16), 3e-6, 1e-19);
}

TEST(Checkpoint, RoundTripIsExact) {
  ndtest::TempDir dir;
  for (const auto& m : {init_mlp(ndtest::tiny_spec(), 1), init_mae(ndtest::tiny_spec(), 2)}) {
    save_checkpoint(m, dir / "m.ndck");
    const auto back = load_checkpoint(dir / "m.ndck");
    EXPECT_EQ(back.arch, m.arch);
    ASSERT_EQ(back.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      EXPECT_EQ(back.params[i].name, m.params[i].name);
      EXPECT_EQ(back.params[i].values, m.params[i].values);
    }
    EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(m));
  }
}

TEST(Checkpoint, RejectsCorruption) {
  auto bytes = serialize_checkpoint(init_mlp(ndtest::tiny_spec(), 1));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_checkpoint(truncated), Error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), Error);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), Error);
}

TEST(Represent, ResizesToEncoderInput) {
  const auto m = init_mlp(ndtest::tiny_spec(), 1);
  Rng rng(1);
  const auto big = ndtest::random_image(32, 32, rng);
  EXPECT_EQ(represent(big, m).dim(), 5u);
  EXPECT_EQ(represent(big, m, RetrievalRepr::z).dim(), 4u);
  EXPECT_TRUE(represent(big, m, RetrievalRepr::z).normalized);
}
