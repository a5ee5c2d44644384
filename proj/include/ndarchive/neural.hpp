#pragma once

// Small dense encoder/decoder toolkit with hand-written backward passes.
//
// Two architectures share the parameter-set machinery:
//  * mlp:       flatten -> dense(hidden) -> ReLU -> dense(repr) = h,
//               projection head dense(proj) -> l2-normalize = z.
//  * patch_mae: per-patch dense(hidden) + position -> ReLU -> dense(repr)
//               encodes visible patches only; a learned mask token fills
//               masked slots; a per-patch dense decoder reconstructs every
//               patch from (token + decoder position + mean visible token).
//
// All math is in double precision so finite-difference checks are tight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/binio.hpp"
#include "ndarchive/codec.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/image.hpp"
#include "ndarchive/rng.hpp"

namespace ndarchive {

struct Embedding {
  std::vector<double> values;
  bool normalized = false;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  std::size_t size() const noexcept { return values.size(); }
};

/// Named, ordered collection of trainable tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    require(!index_.contains(name), "duplicate parameter '" + name + "'");
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    index_[name] = tensors_.size();
    tensors_.push_back(ParamTensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0),
                                   std::vector<double>(n, 0.0)});
    return tensors_.size() - 1;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t id(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) fail(ErrorKind::not_found, "parameter '" + std::string(name) + "'");
    return it->second;
  }

  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }
  ParamTensor& at(std::string_view name) { return tensors_[id(name)]; }
  const ParamTensor& at(std::string_view name) const { return tensors_[id(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
  }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  void init_uniform(std::size_t i, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : tensors_[i].values) v = rng.uniform(-bound, bound);
  }

 private:
  std::vector<ParamTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

enum class Architecture : std::uint8_t { mlp = 0, patch_mae = 1 };

inline std::string_view to_string(Architecture a) { return a == Architecture::mlp ? "mlp" : "patch_mae"; }

struct EncoderSpec {
  std::size_t input_size = 32;
  std::size_t hidden_dim = 64;
  std::size_t repr_dim = 64;
  std::size_t proj_dim = 32;
  std::size_t patch_size = 8;

  std::size_t input_dim() const noexcept { return input_size * input_size; }
  std::size_t patches_per_side() const noexcept { return input_size / patch_size; }
  std::size_t patch_count() const noexcept { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const noexcept { return patch_size * patch_size; }

  void validate(Architecture arch) const {
    require(input_size >= 2 && hidden_dim >= 1 && repr_dim >= 1 && proj_dim >= 1, "encoder dimensions must be >= 1");
    if (arch == Architecture::patch_mae) {
      require(patch_size >= 1 && input_size % patch_size == 0, "input_size must be divisible by patch_size");
      require(patch_count() >= 2, "MAE needs at least two patches");
    }
  }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// Architecture, dimensions and parameters: everything a checkpoint holds.
struct Model {
  Architecture arch = Architecture::mlp;
  EncoderSpec spec;
  ParamSet params;
};

inline Model init_mlp(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate(Architecture::mlp);
  Model m{Architecture::mlp, spec, {}};
  Rng rng(seed);
  auto& p = m.params;
  const auto w1 = p.add("enc.w1", {spec.hidden_dim, spec.input_dim()});
  const auto b1 = p.add("enc.b1", {spec.hidden_dim});
  const auto w2 = p.add("enc.w2", {spec.repr_dim, spec.hidden_dim});
  const auto b2 = p.add("enc.b2", {spec.repr_dim});
  const auto w3 = p.add("proj.w", {spec.proj_dim, spec.repr_dim});
  const auto b3 = p.add("proj.b", {spec.proj_dim});
  p.init_uniform(w1, spec.input_dim(), rng);
  p.init_uniform(b1, spec.input_dim(), rng);
  p.init_uniform(w2, spec.hidden_dim, rng);
  p.init_uniform(b2, spec.hidden_dim, rng);
  p.init_uniform(w3, spec.repr_dim, rng);
  p.init_uniform(b3, spec.repr_dim, rng);
  return m;
}

inline Model init_mae(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate(Architecture::patch_mae);
  Model m{Architecture::patch_mae, spec, {}};
  Rng rng(seed);
  auto& p = m.params;
  const std::size_t pd = spec.patch_dim(), pc = spec.patch_count();
  const auto we = p.add("mae.patch_w", {spec.hidden_dim, pd});
  const auto be = p.add("mae.patch_b", {spec.hidden_dim});
  const auto pos = p.add("mae.pos", {pc, spec.hidden_dim});
  const auto wr = p.add("mae.repr_w", {spec.repr_dim, spec.hidden_dim});
  const auto br = p.add("mae.repr_b", {spec.repr_dim});
  const auto mask = p.add("mae.mask_token", {spec.repr_dim});
  const auto dpos = p.add("mae.dec_pos", {pc, spec.repr_dim});
  const auto wd = p.add("mae.dec_w", {pd, spec.repr_dim});
  const auto bd = p.add("mae.dec_b", {pd});
  p.init_uniform(we, pd, rng);
  p.init_uniform(be, pd, rng);
  p.init_uniform(pos, spec.hidden_dim, rng);
  p.init_uniform(wr, spec.hidden_dim, rng);
  p.init_uniform(br, spec.hidden_dim, rng);
  p.init_uniform(mask, spec.repr_dim, rng);
  p.init_uniform(dpos, spec.repr_dim, rng);
  p.init_uniform(wd, spec.repr_dim, rng);
  p.init_uniform(bd, spec.repr_dim, rng);
  return m;
}

namespace detail {

// y = W x + b, W is (out x in) row-major.
inline void dense(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                  std::span<double> y) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    double acc = b[o];
    const double* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// Accumulates dW += dy x^T, db += dy; returns dx = W^T dy when requested.
inline void dense_backward(std::span<const double> w, std::span<const double> x, std::span<const double> dy,
                           std::span<double> dw, std::span<double> db, std::span<double> dx) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const double g = dy[o];
    db[o] += g;
    if (g == 0.0) continue;
    double* grow = dw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
    if (!dx.empty()) {
      const double* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += g * row[i];
    }
  }
}

inline void check_finite(std::span<const double> v, const std::string& op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericFailure(op, "non-finite value");
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Maps [0,1] intensities to [-1,1] network inputs.
inline std::vector<double> network_input(const ImageGray& img) {
  std::vector<double> x(img.pixels().size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * img.pixels()[i] - 1.0;
  return x;
}

}  // namespace detail

inline constexpr double kDegenerateNorm = 1e-12;

/// Forward activations of the mlp encoder, kept for the backward pass.
struct EncoderTrace {
  std::vector<double> input;
  std::vector<double> pre_hidden;
  std::vector<double> hidden;
  std::vector<double> h;
  std::vector<double> u;  // projection before normalization
  double u_norm = 0.0;
  std::vector<double> z;
};

inline EncoderTrace encode_forward(const ImageGray& img, const Model& model) {
  require(model.arch == Architecture::mlp, "encode requires an mlp model");
  const auto& spec = model.spec;
  require(img.width() == spec.input_size && img.height() == spec.input_size,
          "image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) + ", encoder expects " +
              std::to_string(spec.input_size) + "x" + std::to_string(spec.input_size));
  const auto& p = model.params;
  EncoderTrace t;
  t.input = detail::network_input(img);
  t.pre_hidden.resize(spec.hidden_dim);
  detail::dense(p.at("enc.w1").values, p.at("enc.b1").values, t.input, t.pre_hidden);
  t.hidden.resize(spec.hidden_dim);
  for (std::size_t i = 0; i < t.hidden.size(); ++i) t.hidden[i] = std::max(0.0, t.pre_hidden[i]);
  t.h.resize(spec.repr_dim);
  detail::dense(p.at("enc.w2").values, p.at("enc.b2").values, t.hidden, t.h);
  t.u.resize(spec.proj_dim);
  detail::dense(p.at("proj.w").values, p.at("proj.b").values, t.h, t.u);
  t.u_norm = detail::norm2(t.u);
  if (!std::isfinite(t.u_norm)) throw NumericFailure("encode", "non-finite projection");
  if (t.u_norm < kDegenerateNorm) fail(ErrorKind::degenerate_embedding, "projection output is the zero vector");
  t.z.resize(spec.proj_dim);
  for (std::size_t i = 0; i < t.z.size(); ++i) t.z[i] = t.u[i] / t.u_norm;
  return t;
}

struct EncodedPair {
  Embedding h;  // retrieval representation, never normalized
  Embedding z;  // unit-norm contrastive projection
};

inline EncodedPair encode(const ImageGray& img, const Model& model) {
  auto t = encode_forward(img, model);
  return {Embedding{std::move(t.h), false}, Embedding{std::move(t.z), true}};
}

/// Accumulates parameter gradients given dL/dh and dL/dz (either may be
/// empty when that output does not feed the loss).
inline void encode_backward(const EncoderTrace& t, std::span<const double> dh_in, std::span<const double> dz,
                            Model& model) {
  auto& p = model.params;
  std::vector<double> dh(t.h.size(), 0.0);
  if (!dh_in.empty()) std::copy(dh_in.begin(), dh_in.end(), dh.begin());
  if (!dz.empty()) {
    // z = u/|u|: du = (dz - z (z . dz)) / |u|
    double zdz = 0.0;
    for (std::size_t i = 0; i < dz.size(); ++i) zdz += t.z[i] * dz[i];
    std::vector<double> du(dz.size());
    for (std::size_t i = 0; i < du.size(); ++i) du[i] = (dz[i] - t.z[i] * zdz) / t.u_norm;
    auto& w3 = p.at("proj.w");
    detail::dense_backward(w3.values, t.h, du, w3.grad, p.at("proj.b").grad, dh);
  }
  detail::check_finite(dh, "encode_backward:h");
  std::vector<double> dhidden(t.hidden.size(), 0.0);
  auto& w2 = p.at("enc.w2");
  detail::dense_backward(w2.values, t.hidden, dh, w2.grad, p.at("enc.b2").grad, dhidden);
  for (std::size_t i = 0; i < dhidden.size(); ++i)
    if (t.pre_hidden[i] <= 0.0) dhidden[i] = 0.0;
  auto& w1 = p.at("enc.w1");
  detail::dense_backward(w1.values, t.input, dhidden, w1.grad, p.at("enc.b1").grad, {});
}

// ---------------------------------------------------------------------------
// Masked autoencoder

struct MaskPlan {
  std::size_t patch_count = 0;
  std::vector<std::size_t> masked_indices;  // strictly increasing
  double ratio = 0.0;

  void validate() const {
    for (std::size_t i = 0; i < masked_indices.size(); ++i) {
      require(masked_indices[i] < patch_count, "mask index out of range");
      require(i == 0 || masked_indices[i - 1] < masked_indices[i], "mask indices must be strictly increasing");
    }
  }
};

/// Samples round(ratio * patch_count) distinct patches to hide.
inline MaskPlan make_mask_plan(std::size_t patch_count, double ratio, Rng& rng) {
  require(ratio >= 0.0 && ratio <= 1.0, "mask ratio outside [0,1]");
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(patch_count)));
  std::vector<std::size_t> order(patch_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  order.resize(count);
  std::sort(order.begin(), order.end());
  return {patch_count, std::move(order), ratio};
}

enum class MaeLossScope { masked, all };

struct MaeTrace {
  std::vector<std::vector<double>> patches;  // network input per patch
  std::vector<std::vector<double>> targets;  // [0,1] pixels per patch
  std::vector<bool> visible;
  std::vector<std::size_t> visible_ids;
  std::vector<std::vector<double>> pre_hidden;  // per visible patch (indexed by patch id)
  std::vector<std::vector<double>> hidden;
  std::vector<std::vector<double>> tokens;       // repr per visible patch
  std::vector<double> context;                   // mean visible token
  std::vector<std::vector<double>> dec_in;
  std::vector<std::vector<double>> reconstruction;  // per patch, patch_dim values
  std::vector<std::size_t> scored;
  double loss = 0.0;
};

namespace detail {

inline void extract_patches(const ImageGray& img, const EncoderSpec& spec, MaeTrace& t) {
  const std::size_t ps = spec.patch_size, side = spec.patches_per_side();
  t.patches.assign(spec.patch_count(), std::vector<double>(spec.patch_dim()));
  t.targets.assign(spec.patch_count(), std::vector<double>(spec.patch_dim()));
  for (std::size_t k = 0; k < spec.patch_count(); ++k) {
    const std::size_t ox = (k % side) * ps, oy = (k / side) * ps;
    for (std::size_t y = 0; y < ps; ++y)
      for (std::size_t x = 0; x < ps; ++x) {
        const double v = img(ox + x, oy + y);
        t.targets[k][y * ps + x] = v;
        t.patches[k][y * ps + x] = 2.0 * v - 1.0;
      }
  }
}

// Encodes the visible patches and the pooled context.
inline void mae_encode(const Model& model, MaeTrace& t) {
  const auto& spec = model.spec;
  const auto& p = model.params;
  const auto& we = p.at("mae.patch_w").values;
  const auto& be = p.at("mae.patch_b").values;
  const auto& pos = p.at("mae.pos").values;
  const auto& wr = p.at("mae.repr_w").values;
  const auto& br = p.at("mae.repr_b").values;
  const std::size_t hd = spec.hidden_dim, rd = spec.repr_dim, pc = spec.patch_count();
  t.pre_hidden.assign(pc, {});
  t.hidden.assign(pc, {});
  t.tokens.assign(pc, {});
  t.context.assign(rd, 0.0);
  for (std::size_t k : t.visible_ids) {
    auto& e = t.pre_hidden[k];
    e.resize(hd);
    dense(we, be, t.patches[k], e);
    for (std::size_t i = 0; i < hd; ++i) e[i] += pos[k * hd + i];
    auto& r = t.hidden[k];
    r.resize(hd);
    for (std::size_t i = 0; i < hd; ++i) r[i] = std::max(0.0, e[i]);
    auto& tok = t.tokens[k];
    tok.resize(rd);
    dense(wr, br, r, tok);
    for (std::size_t i = 0; i < rd; ++i) t.context[i] += tok[i];
  }
  const double inv = 1.0 / static_cast<double>(t.visible_ids.size());
  for (double& c : t.context) c *= inv;
}

}  // namespace detail

/// Runs encoder on visible patches and decoder on all patches; the loss is
/// MSE over masked patches (or over every patch with MaeLossScope::all).
inline MaeTrace mae_forward(const ImageGray& img, const MaskPlan& plan, const Model& model,
                            MaeLossScope scope = MaeLossScope::masked) {
  require(model.arch == Architecture::patch_mae, "mae_forward requires a patch_mae model");
  const auto& spec = model.spec;
  require(img.width() == spec.input_size && img.height() == spec.input_size, "image size does not match encoder");
  require(plan.patch_count == spec.patch_count(), "mask plan patch count does not match encoder");
  plan.validate();
  MaeTrace t;
  t.visible.assign(plan.patch_count, true);
  for (std::size_t k : plan.masked_indices) t.visible[k] = false;
  for (std::size_t k = 0; k < plan.patch_count; ++k)
    if (t.visible[k]) t.visible_ids.push_back(k);
  require(!t.visible_ids.empty(), "mask hides every patch");

  detail::extract_patches(img, spec, t);
  detail::mae_encode(model, t);

  const auto& p = model.params;
  const auto& mask = p.at("mae.mask_token").values;
  const auto& dpos = p.at("mae.dec_pos").values;
  const auto& wd = p.at("mae.dec_w").values;
  const auto& bd = p.at("mae.dec_b").values;
  const std::size_t rd = spec.repr_dim, pc = spec.patch_count();
  t.dec_in.assign(pc, std::vector<double>(rd));
  t.reconstruction.assign(pc, std::vector<double>(spec.patch_dim()));
  for (std::size_t k = 0; k < pc; ++k) {
    const auto& src = t.visible[k] ? t.tokens[k] : mask;
    for (std::size_t i = 0; i < rd; ++i) t.dec_in[k][i] = src[i] + dpos[k * rd + i] + t.context[i];
    detail::dense(wd, bd, t.dec_in[k], t.reconstruction[k]);
  }

  t.scored = scope == MaeLossScope::masked ? plan.masked_indices : [&] {
    std::vector<std::size_t> all(pc);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }();
  require(!t.scored.empty(), "no masked patches to score");
  double se = 0.0;
  for (std::size_t k : t.scored)
    for (std::size_t i = 0; i < spec.patch_dim(); ++i) {
      const double d = t.reconstruction[k][i] - t.targets[k][i];
      se += d * d;
    }
  t.loss = se / static_cast<double>(t.scored.size() * spec.patch_dim());
  return t;
}

/// Accumulates gradients of `scale * loss` into the model.
inline void mae_backward(const MaeTrace& t, Model& model, double scale = 1.0) {
  if (!std::isfinite(t.loss)) throw NumericFailure("mae_loss", "non-finite loss");
  const auto& spec = model.spec;
  auto& p = model.params;
  const std::size_t rd = spec.repr_dim, hd = spec.hidden_dim, pd = spec.patch_dim(), pc = spec.patch_count();
  const double coef = 2.0 * scale / static_cast<double>(t.scored.size() * pd);

  auto& wd = p.at("mae.dec_w");
  auto& bd = p.at("mae.dec_b");
  auto& dpos = p.at("mae.dec_pos");
  auto& mask = p.at("mae.mask_token");
  std::vector<std::vector<double>> dtok(pc);
  std::vector<double> dcontext(rd, 0.0);
  std::vector<double> dy(pd), ddec(rd);
  for (std::size_t k : t.scored) {
    for (std::size_t i = 0; i < pd; ++i) dy[i] = coef * (t.reconstruction[k][i] - t.targets[k][i]);
    std::fill(ddec.begin(), ddec.end(), 0.0);
    detail::dense_backward(wd.values, t.dec_in[k], dy, wd.grad, bd.grad, ddec);
    for (std::size_t i = 0; i < rd; ++i) {
      dpos.grad[k * rd + i] += ddec[i];
      dcontext[i] += ddec[i];
    }
    if (t.visible[k]) {
      dtok[k].resize(rd, 0.0);
      for (std::size_t i = 0; i < rd; ++i) dtok[k][i] += ddec[i];
    } else {
      for (std::size_t i = 0; i < rd; ++i) mask.grad[i] += ddec[i];
    }
  }
  detail::check_finite(dcontext, "mae_backward:context");

  auto& we = p.at("mae.patch_w");
  auto& be = p.at("mae.patch_b");
  auto& pos = p.at("mae.pos");
  auto& wr = p.at("mae.repr_w");
  auto& br = p.at("mae.repr_b");
  const double inv = 1.0 / static_cast<double>(t.visible_ids.size());
  std::vector<double> dr(hd);
  for (std::size_t k : t.visible_ids) {
    dtok[k].resize(rd, 0.0);
    for (std::size_t i = 0; i < rd; ++i) dtok[k][i] += dcontext[i] * inv;
    std::fill(dr.begin(), dr.end(), 0.0);
    detail::dense_backward(wr.values, t.hidden[k], dtok[k], wr.grad, br.grad, dr);
    for (std::size_t i = 0; i < hd; ++i) {
      if (t.pre_hidden[k][i] <= 0.0) dr[i] = 0.0;
      pos.grad[k * hd + i] += dr[i];
    }
    detail::dense_backward(we.values, t.patches[k], dr, we.grad, be.grad, {});
  }
}

/// Retrieval representation of an MAE model: every patch visible, tokens
/// mean-pooled.
inline Embedding mae_embed(const ImageGray& img, const Model& model) {
  require(model.arch == Architecture::patch_mae, "mae_embed requires a patch_mae model");
  const auto& spec = model.spec;
  require(img.width() == spec.input_size && img.height() == spec.input_size, "image size does not match encoder");
  MaeTrace t;
  t.visible.assign(spec.patch_count(), true);
  t.visible_ids.resize(spec.patch_count());
  std::iota(t.visible_ids.begin(), t.visible_ids.end(), std::size_t{0});
  detail::extract_patches(img, spec, t);
  detail::mae_encode(model, t);
  return {std::move(t.context), false};
}

// ---------------------------------------------------------------------------
// Simple losses over raw parameters

/// L = scale * sum of squares over all parameters; gradient 2 * scale * theta.
inline double squared_norm_loss(Model& model, double scale = 1.0) {
  double loss = 0.0;
  for (auto& t : model.params)
    for (std::size_t i = 0; i < t.size(); ++i) {
      loss += scale * t.values[i] * t.values[i];
      t.grad[i] += 2.0 * scale * t.values[i];
    }
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamSet& params) {
    AdamState s;
    for (const auto& t : params) {
      s.m.emplace_back(t.size(), 0.0);
      s.v.emplace_back(t.size(), 0.0);
    }
    return s;
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Step-decay schedule: lr * decay^floor(epoch / every).
inline double scheduled_lr(double base_lr, double decay, std::size_t every, std::size_t epoch) {
  require(every >= 1, "decay interval must be >= 1");
  return base_lr * std::pow(decay, static_cast<double>(epoch / every));
}

/// One bias-corrected Adam update using the gradients stored in `params`.
inline void adam_step(ParamSet& params, AdamState& state, double lr, const AdamHyper& hp = {}) {
  require(state.m.size() == params.size(), "optimizer state does not match parameter set");
  for (const auto& t : params) detail::check_finite(t.grad, "adam_step:" + t.name);
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    auto& t = params[ti];
    auto& m = state.m[ti];
    auto& v = state.v[ti];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      t.values[i] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
    detail::check_finite(t.values, "adam_step:" + t.name);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "NDCK", u16 version, architecture and spec fields, then
// each tensor as (name, rank, dims, little-endian f64 values).

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  binio::Writer w;
  w.raw("NDCK");
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(model.arch));
  for (auto v : {model.spec.input_size, model.spec.hidden_dim, model.spec.repr_dim, model.spec.proj_dim,
                 model.spec.patch_size})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& t : model.params) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.f64(v);
  }
  return w.take();
}

inline Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "checkpoint");
  r.magic("NDCK");
  const auto version = r.u16();
  require(version == kCheckpointVersion, "unsupported checkpoint version " + std::to_string(version));
  Model m;
  const auto arch = r.u8();
  require(arch <= 1, "unknown architecture tag");
  m.arch = static_cast<Architecture>(arch);
  m.spec.input_size = r.u32();
  m.spec.hidden_dim = r.u32();
  m.spec.repr_dim = r.u32();
  m.spec.proj_dim = r.u32();
  m.spec.patch_size = r.u32();
  m.spec.validate(m.arch);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    std::vector<std::size_t> shape(r.u32());
    for (auto& d : shape) d = r.u32();
    const auto id = m.params.add(std::move(name), std::move(shape));
    for (double& v : m.params[id].values) v = r.f64();
    detail::check_finite(m.params[id].values, "checkpoint:" + m.params[id].name);
  }
  require(r.done(), "checkpoint: trailing bytes");
  // Structural check against a freshly built model of the same spec.
  const Model ref = m.arch == Architecture::mlp ? init_mlp(m.spec, 0) : init_mae(m.spec, 0);
  for (const auto& t : ref.params) {
    require(m.params.contains(t.name), "checkpoint lacks tensor " + t.name);
    require(m.params.at(t.name).shape == t.shape, "checkpoint tensor " + t.name + " has wrong shape");
  }
  return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------

enum class RetrievalRepr { h, z };

/// The descriptor used for retrieval. MLP models return h (or z on
/// request); MAE models return the pooled token representation.
inline Embedding represent(const ImageGray& img, const Model& model, RetrievalRepr which = RetrievalRepr::h) {
  const ImageGray input = img.width() == model.spec.input_size && img.height() == model.spec.input_size
                              ? img
                              : resize(img, model.spec.input_size, model.spec.input_size, Interpolation::area);
  if (model.arch == Architecture::patch_mae) return mae_embed(input, model);
  auto pair = encode(input, model);
  return which == RetrievalRepr::h ? std::move(pair.h) : std::move(pair.z);
}

}  // namespace ndarchive
