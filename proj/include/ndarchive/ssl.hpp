#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/augment.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/image.hpp"
#include "ndarchive/neural.hpp"
#include "ndarchive/rng.hpp"

namespace ndarchive {

enum class TrainMode { cross_entropy, triplet, simclr, mae };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::cross_entropy: return "cross-entropy";
    case TrainMode::triplet: return "triplet";
    case TrainMode::simclr: return "simclr";
    case TrainMode::mae: return "mae";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "cross-entropy") return TrainMode::cross_entropy;
  if (s == "triplet") return TrainMode::triplet;
  if (s == "simclr") return TrainMode::simclr;
  if (s == "mae") return TrainMode::mae;
  fail(ErrorKind::invalid_input, "unknown training mode '" + std::string(s) + "'");
}

// The NT-Xent denominator sums over every k != i (the anchor itself is the
// only excluded term). There is no alternative reading to select.
inline constexpr std::string_view kNtXentIndicator = "k != i";

struct TrainConfig {
  TrainMode mode = TrainMode::simclr;
  double lr = 3e-4;
  double lr_decay = 0.1;
  std::size_t decay_every = 8;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double temperature = 0.5;
  double margin = 0.2;
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;
  MaeLossScope mae_loss_scope = MaeLossScope::masked;
  AugmentationPolicy augmentation{};

  void validate() const {
    require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
    require(lr_decay > 0.0 && decay_every >= 1, "invalid learning-rate schedule");
    require(temperature > 0.0, "temperature must be > 0");
    require(margin >= 0.0, "margin must be >= 0");
    require(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio must lie in (0,1)");
    require(batch_size >= 1, "batch_size must be >= 1");
    if (mode == TrainMode::simclr) require(batch_size >= 2, "simclr needs batch_size >= 2");
    augmentation.params.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> trace;
};

/// `epoch,loss,lr` with 17 significant digits.
inline std::string trace_csv(const std::vector<EpochRecord>& trace) {
  std::string out = "epoch,loss,lr\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.loss, r.lr);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

struct LossWithGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // one row per input vector
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline constexpr double kUnitNormTolerance = 1e-6;

}  // namespace detail

/// NT-Xent over 2N unit vectors where rows (2k, 2k+1) are the two views of
/// image k. Mean over all 2N ordered positive pairs.
inline LossWithGrad nt_xent(std::span<const std::vector<double>> z, double temperature) {
  require(temperature > 0.0, "temperature must be > 0");
  require(!z.empty() && z.size() % 2 == 0, "contrastive batch must hold 2N embeddings");
  const std::size_t n2 = z.size(), dim = z[0].size();
  for (const auto& v : z) {
    require(v.size() == dim, "embedding dimensions differ");
    require(std::abs(detail::norm2(v) - 1.0) <= detail::kUnitNormTolerance, "contrastive embedding is not unit-norm");
  }
  std::vector<std::vector<double>> sim(n2, std::vector<double>(n2));
  for (std::size_t i = 0; i < n2; ++i)
    for (std::size_t k = 0; k < n2; ++k) sim[i][k] = detail::dot(z[i], z[k]) / temperature;

  LossWithGrad out{0.0, std::vector<std::vector<double>>(n2, std::vector<double>(dim, 0.0))};
  const double scale = 1.0 / static_cast<double>(n2);
  std::vector<double> prob(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    const std::size_t j = i ^ 1u;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n2; ++k)
      if (k != i) mx = std::max(mx, sim[i][k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < n2; ++k) {
      prob[k] = k == i ? 0.0 : std::exp(sim[i][k] - mx);
      sum += prob[k];
    }
    const double lse = mx + std::log(sum);
    out.loss += scale * (lse - sim[i][j]);
    for (std::size_t k = 0; k < n2; ++k) prob[k] /= sum;
    // d l_i / d z_i = (sum_k p_ik z_k - z_j) / tau ; d l_i / d z_k = (p_ik - [k==j]) z_i / tau
    const double c = scale / temperature;
    for (std::size_t k = 0; k < n2; ++k) {
      if (k == i) continue;
      const double w = prob[k] - (k == j ? 1.0 : 0.0);
      for (std::size_t d = 0; d < dim; ++d) {
        out.grad[i][d] += c * w * z[k][d];
        out.grad[k][d] += c * w * z[i][d];
      }
    }
  }
  if (!std::isfinite(out.loss)) throw NumericFailure("nt_xent", "non-finite loss");
  return out;
}

inline double nt_xent_loss(std::span<const Embedding> views, double temperature) {
  std::vector<std::vector<double>> z;
  z.reserve(views.size());
  for (const auto& e : views) z.push_back(e.values);
  return nt_xent(z, temperature).loss;
}

struct Triplet {
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<double> negative;
};

inline double triplet_term(const Triplet& t, double margin) {
  return std::max(0.0, detail::squared_distance(t.anchor, t.positive) -
                           detail::squared_distance(t.anchor, t.negative) + margin);
}

/// Mean hinge triplet loss; grad rows are (anchor, positive, negative) per
/// triplet, in order.
inline LossWithGrad triplet(std::span<const Triplet> triplets, double margin) {
  require(!triplets.empty(), "empty triplet list");
  require(margin >= 0.0, "margin must be >= 0");
  LossWithGrad out;
  const double scale = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    require(t.anchor.size() == t.positive.size() && t.anchor.size() == t.negative.size(),
            "triplet dimensions differ");
    const double term = triplet_term(t, margin);
    out.loss += scale * term;
    const std::size_t d = t.anchor.size();
    std::vector<double> ga(d, 0.0), gp(d, 0.0), gn(d, 0.0);
    if (term > 0.0) {
      for (std::size_t i = 0; i < d; ++i) {
        ga[i] = scale * 2.0 * (t.negative[i] - t.positive[i]);
        gp[i] = scale * -2.0 * (t.anchor[i] - t.positive[i]);
        gn[i] = scale * 2.0 * (t.anchor[i] - t.negative[i]);
      }
    }
    out.grad.push_back(std::move(ga));
    out.grad.push_back(std::move(gp));
    out.grad.push_back(std::move(gn));
  }
  if (!std::isfinite(out.loss)) throw NumericFailure("triplet", "non-finite loss");
  return out;
}

inline double triplet_loss(std::span<const Triplet> triplets, double margin) { return triplet(triplets, margin).loss; }

/// Mean softmax cross-entropy with max-subtraction; grad rows are dL/dlogits.
inline LossWithGrad cross_entropy(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels) {
  require(!logits.empty(), "empty supervised batch");
  require(logits.size() == labels.size(), "one label per logits row required");
  const std::size_t m = logits[0].size();
  require(m >= 2, "cross-entropy needs at least two classes");
  LossWithGrad out;
  const double scale = 1.0 / static_cast<double>(logits.size());
  for (std::size_t r = 0; r < logits.size(); ++r) {
    require(logits[r].size() == m, "logits rows differ in class count");
    require(labels[r] < m, "label out of range");
    const double mx = *std::max_element(logits[r].begin(), logits[r].end());
    double sum = 0.0;
    for (double v : logits[r]) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    out.loss += scale * (lse - logits[r][labels[r]]);
    std::vector<double> g(m);
    for (std::size_t c = 0; c < m; ++c) g[c] = scale * (std::exp(logits[r][c] - lse) - (c == labels[r] ? 1.0 : 0.0));
    out.grad.push_back(std::move(g));
  }
  if (!std::isfinite(out.loss)) throw NumericFailure("cross_entropy", "non-finite loss");
  return out;
}

struct SupervisedBatch {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
};

inline double cross_entropy_loss(const SupervisedBatch& batch) { return cross_entropy(batch.logits, batch.labels).loss; }

// ---------------------------------------------------------------------------
// Losses composed with the encoder. Each returns the scalar loss and, when
// `with_grad`, accumulates exact gradients into model.params.

/// views: 2N images ordered so (2k, 2k+1) are the two views of image k.
inline double simclr_batch_loss(std::span<const ImageGray> views, Model& model, double temperature, bool with_grad) {
  std::vector<EncoderTrace> traces;
  std::vector<std::vector<double>> z;
  for (const auto& v : views) {
    traces.push_back(encode_forward(v, model));
    z.push_back(traces.back().z);
  }
  auto lg = nt_xent(z, temperature);
  if (with_grad)
    for (std::size_t i = 0; i < traces.size(); ++i) encode_backward(traces[i], {}, lg.grad[i], model);
  return lg.loss;
}

/// Triplet loss on the retrieval representation h.
inline double triplet_batch_loss(std::span<const ImageGray> anchors, std::span<const ImageGray> positives,
                                 std::span<const ImageGray> negatives, Model& model, double margin, bool with_grad) {
  require(anchors.size() == positives.size() && anchors.size() == negatives.size(), "triplet image lists differ");
  std::vector<EncoderTrace> traces;
  std::vector<Triplet> triplets;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    traces.push_back(encode_forward(anchors[i], model));
    traces.push_back(encode_forward(positives[i], model));
    traces.push_back(encode_forward(negatives[i], model));
    const auto n = traces.size();
    triplets.push_back({traces[n - 3].h, traces[n - 2].h, traces[n - 1].h});
  }
  auto lg = triplet(triplets, margin);
  if (with_grad)
    for (std::size_t i = 0; i < traces.size(); ++i) encode_backward(traces[i], lg.grad[i], {}, model);
  return lg.loss;
}

/// Adds a (classes x repr_dim) classification head on h.
inline void add_classification_head(Model& model, std::size_t classes, std::uint64_t seed) {
  require(classes >= 2, "classification needs at least two classes");
  require(!model.params.contains("cls.w"), "model already has a classification head");
  Rng rng(seed);
  const auto w = model.params.add("cls.w", {classes, model.spec.repr_dim});
  const auto b = model.params.add("cls.b", {classes});
  model.params.init_uniform(w, model.spec.repr_dim, rng);
  model.params.init_uniform(b, model.spec.repr_dim, rng);
}

inline std::vector<double> classify(const EncoderTrace& t, const Model& model) {
  const auto& w = model.params.at("cls.w");
  std::vector<double> logits(w.shape[0]);
  detail::dense(w.values, model.params.at("cls.b").values, t.h, logits);
  return logits;
}

inline double cross_entropy_batch_loss(std::span<const ImageGray> images, std::span<const std::size_t> labels,
                                       Model& model, bool with_grad) {
  std::vector<EncoderTrace> traces;
  std::vector<std::vector<double>> logits;
  for (const auto& img : images) {
    traces.push_back(encode_forward(img, model));
    logits.push_back(classify(traces.back(), model));
  }
  auto lg = cross_entropy(logits, labels);
  if (with_grad) {
    auto& w = model.params.at("cls.w");
    auto& b = model.params.at("cls.b");
    for (std::size_t i = 0; i < traces.size(); ++i) {
      std::vector<double> dh(model.spec.repr_dim, 0.0);
      detail::dense_backward(w.values, traces[i].h, lg.grad[i], w.grad, b.grad, dh);
      encode_backward(traces[i], dh, {}, model);
    }
  }
  return lg.loss;
}

inline double mae_batch_loss(std::span<const ImageGray> images, std::span<const MaskPlan> plans, Model& model,
                             MaeLossScope scope, bool with_grad) {
  require(!images.empty() && images.size() == plans.size(), "one mask plan per image required");
  const double scale = 1.0 / static_cast<double>(images.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto t = mae_forward(images[i], plans[i], model, scope);
    loss += scale * t.loss;
    if (with_grad) mae_backward(t, model, scale);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loops

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                           std::size_t min_batch, Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + batch_size)));
  // A trailing batch below the minimum joins its predecessor.
  if (batches.size() > 1 && batches.back().size() < min_batch) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

inline void check_corpus(std::span<const ImageGray> corpus, const Model& model) {
  require(!corpus.empty(), "training corpus is empty");
  for (const auto& img : corpus)
    require(img.width() == model.spec.input_size && img.height() == model.spec.input_size,
            "training image size does not match encoder input");
}

}  // namespace detail

/// Contrastive training: two independently augmented views per image,
/// NT-Xent on the projections, Adam with step decay.
inline TrainResult simclr_train(std::span<const ImageGray> corpus, Model model, const TrainConfig& cfg) {
  cfg.validate();
  require(model.arch == Architecture::mlp, "simclr trains an mlp encoder");
  TrainResult result{std::move(model), {}};
  if (cfg.epochs == 0) return result;
  detail::check_corpus(corpus, result.model);
  require(corpus.size() >= 2, "simclr needs at least two images");
  auto& m = result.model;
  auto state = AdamState::for_params(m.params);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, epoch);
    Rng rng(Rng::derive(cfg.seed, epoch));
    double total = 0.0;
    for (const auto& batch : detail::epoch_batches(corpus.size(), cfg.batch_size, 2, rng)) {
      std::vector<ImageGray> views;
      for (std::size_t idx : batch) {
        const auto base = Rng::derive(Rng::derive(cfg.seed ^ 0x5c1a, epoch), idx);
        views.push_back(augment_view(corpus[idx], cfg.augmentation, Rng::derive(base, 0)));
        views.push_back(augment_view(corpus[idx], cfg.augmentation, Rng::derive(base, 1)));
      }
      m.params.zero_grad();
      total += simclr_batch_loss(views, m, cfg.temperature, true) * static_cast<double>(batch.size());
      adam_step(m.params, state, lr);
    }
    result.trace.push_back({epoch, total / static_cast<double>(corpus.size()), lr});
  }
  return result;
}

inline TrainResult mae_train(std::span<const ImageGray> corpus, Model model, const TrainConfig& cfg) {
  cfg.validate();
  require(model.arch == Architecture::patch_mae, "mae_train needs a patch_mae model");
  TrainResult result{std::move(model), {}};
  if (cfg.epochs == 0) return result;
  detail::check_corpus(corpus, result.model);
  auto& m = result.model;
  auto state = AdamState::for_params(m.params);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, epoch);
    Rng rng(Rng::derive(cfg.seed, epoch));
    double total = 0.0;
    for (const auto& batch : detail::epoch_batches(corpus.size(), cfg.batch_size, 1, rng)) {
      std::vector<ImageGray> imgs;
      std::vector<MaskPlan> plans;
      for (std::size_t idx : batch) {
        Rng mask_rng(Rng::derive(Rng::derive(cfg.seed ^ 0x3a5e, epoch), idx));
        imgs.push_back(corpus[idx]);
        plans.push_back(make_mask_plan(m.spec.patch_count(), cfg.mask_ratio, mask_rng));
      }
      m.params.zero_grad();
      total += mae_batch_loss(imgs, plans, m, cfg.mae_loss_scope, true) * static_cast<double>(batch.size());
      adam_step(m.params, state, lr);
    }
    result.trace.push_back({epoch, total / static_cast<double>(corpus.size()), lr});
  }
  return result;
}

/// Maps arbitrary group ids to dense class indices (ascending group id).
inline std::vector<std::size_t> dense_labels(std::span<const std::optional<std::int64_t>> groups, std::size_t* classes) {
  std::map<std::int64_t, std::size_t> ids;
  for (const auto& g : groups) {
    require(g.has_value(), "supervised training requires a group label for every image");
    ids.emplace(*g, 0);
  }
  std::size_t next = 0;
  for (auto& [g, c] : ids) c = next++;
  std::vector<std::size_t> out;
  for (const auto& g : groups) out.push_back(ids.at(*g));
  if (classes) *classes = ids.size();
  return out;
}

/// Uniformly samples a positive (same label, different image when one
/// exists) and a negative (different label) for `anchor`.
inline std::pair<std::size_t, std::size_t> sample_triplet(std::span<const std::size_t> labels, std::size_t anchor,
                                                          Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == labels[anchor]) {
      if (i != anchor) pos.push_back(i);
    } else {
      neg.push_back(i);
    }
  }
  require(!neg.empty(), "triplet sampling needs at least two groups");
  if (pos.empty()) pos.push_back(anchor);
  const std::size_t p = pos[rng.below(pos.size())];
  const std::size_t n = neg[rng.below(neg.size())];
  return {p, n};
}

inline TrainResult supervised_train(std::span<const ImageGray> corpus, std::span<const std::optional<std::int64_t>> groups,
                                    Model model, const TrainConfig& cfg) {
  cfg.validate();
  require(cfg.mode == TrainMode::cross_entropy || cfg.mode == TrainMode::triplet,
          "supervised_train handles cross-entropy and triplet modes");
  require(model.arch == Architecture::mlp, "supervised training needs an mlp encoder");
  require(corpus.size() == groups.size(), "one group label per image required");
  std::size_t classes = 0;
  const auto labels = dense_labels(groups, &classes);
  require(classes >= 2, "supervised training needs at least two groups");
  TrainResult result{std::move(model), {}};
  auto& m = result.model;
  if (cfg.mode == TrainMode::cross_entropy && !m.params.contains("cls.w"))
    add_classification_head(m, classes, Rng::derive(cfg.seed, 0xc15));
  if (cfg.epochs == 0) return result;
  detail::check_corpus(corpus, m);
  auto state = AdamState::for_params(m.params);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, epoch);
    Rng rng(Rng::derive(cfg.seed, epoch));
    Rng sampler(Rng::derive(cfg.seed ^ 0x7419, epoch));
    double total = 0.0;
    for (const auto& batch : detail::epoch_batches(corpus.size(), cfg.batch_size, 1, rng)) {
      m.params.zero_grad();
      double loss = 0.0;
      if (cfg.mode == TrainMode::cross_entropy) {
        std::vector<ImageGray> imgs;
        std::vector<std::size_t> ys;
        for (std::size_t idx : batch) {
          imgs.push_back(corpus[idx]);
          ys.push_back(labels[idx]);
        }
        loss = cross_entropy_batch_loss(imgs, ys, m, true);
      } else {
        std::vector<ImageGray> a, p, n;
        for (std::size_t idx : batch) {
          const auto [pi, ni] = sample_triplet(labels, idx, sampler);
          a.push_back(corpus[idx]);
          p.push_back(corpus[pi]);
          n.push_back(corpus[ni]);
        }
        loss = triplet_batch_loss(a, p, n, m, cfg.margin, true);
      }
      total += loss * static_cast<double>(batch.size());
      adam_step(m.params, state, lr);
    }
    result.trace.push_back({epoch, total / static_cast<double>(corpus.size()), lr});
  }
  return result;
}

/// Fraction of images whose arg-max class equals their label.
inline double classification_accuracy(std::span<const ImageGray> images, std::span<const std::size_t> labels,
                                      const Model& model) {
  require(images.size() == labels.size() && !images.empty(), "one label per image required");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto logits = classify(encode_forward(images[i], model), model);
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

}  // namespace ndarchive
