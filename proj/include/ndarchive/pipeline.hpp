#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/codec.hpp"
#include "ndarchive/corpus.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/hashing.hpp"
#include "ndarchive/manifest.hpp"
#include "ndarchive/neural.hpp"
#include "ndarchive/retrieval.hpp"
#include "ndarchive/ssl.hpp"

namespace ndarchive {

namespace fs = std::filesystem;

/// Default artifact root: $NDARCHIVE_DATA_DIR, else ./ndarchive-data.
inline fs::path default_data_dir() {
  if (const char* env = std::getenv("NDARCHIVE_DATA_DIR"); env && *env) return env;
  return "ndarchive-data";
}

// ---------------------------------------------------------------------------
// Corpus on disk

struct Corpus {
  fs::path root;
  CorpusManifest manifest;
  std::vector<ImageGray> images;  // parallel to manifest.records
  std::vector<std::string> skipped;  // "path: reason" for undecodable files
};

inline fs::path resolve(const fs::path& root, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : root / p;
}

/// Writes images as PNG under `dir` plus `dir/manifest.tsv`.
inline void write_corpus(const SyntheticCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < corpus.images.size(); ++i)
    write_file(resolve(dir, corpus.manifest.records[i].path), encode_png(corpus.images[i]));
  corpus.manifest.save(dir / "manifest.tsv");
}

namespace detail {

inline bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline Corpus load_manifest_corpus(const fs::path& manifest_file) {
  Corpus c;
  c.root = manifest_file.parent_path();
  const CorpusManifest listed = CorpusManifest::load(manifest_file);
  for (const auto& r : listed.records) {
    const fs::path file = resolve(c.root, r.path);
    if (!fs::exists(file)) fail(ErrorKind::io, "manifest references missing file " + file.string());
    try {
      c.images.push_back(load_gray(file));
      c.manifest.records.push_back(r);
    } catch (const Error& e) {
      c.skipped.push_back(r.path + ": " + e.what());
    }
  }
  return c;
}

inline Corpus discover_corpus(const fs::path& dir) {
  Corpus c;
  c.root = dir;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
  std::vector<std::string> rel;
  for (const auto& f : files) rel.push_back(fs::relative(f, dir).generic_string());
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) {
    try {
      c.images.push_back(load_gray(dir / r));
      c.manifest.records.push_back({r, r, std::nullopt, Split::test});
    } catch (const Error& e) {
      c.skipped.push_back(r + ": " + e.what());
    }
  }
  return c;
}

}  // namespace detail

/// Loads a corpus from a manifest file, from a directory holding
/// manifest.tsv, or by recursive PNG/JPEG discovery (ids are relative
/// paths, groups unknown, everything in the test split). Undecodable files
/// are skipped and listed in Corpus::skipped.
inline Corpus ingest(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::io, "no such file or directory: " + path.string());
  Corpus c;
  if (fs::is_directory(path)) {
    c = fs::exists(path / "manifest.tsv") ? detail::load_manifest_corpus(path / "manifest.tsv")
                                           : detail::discover_corpus(path);
  } else {
    c = detail::load_manifest_corpus(path);
  }
  require(!c.images.empty(), "corpus at " + path.string() + " contains no decodable images");
  c.manifest.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Experiment specification

enum class Method { phash, blockmean, average, supervised_ce, supervised_triplet, simclr, mae };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::phash: return "phash";
    case Method::blockmean: return "blockmean";
    case Method::average: return "average";
    case Method::supervised_ce: return "supervised-ce";
    case Method::supervised_triplet: return "supervised-triplet";
    case Method::simclr: return "simclr";
    case Method::mae: return "mae";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (auto m : {Method::phash, Method::blockmean, Method::average, Method::supervised_ce, Method::supervised_triplet,
                 Method::simclr, Method::mae})
    if (to_string(m) == s) return m;
  fail(ErrorKind::invalid_input, "unknown method '" + std::string(s) + "'");
}

inline bool is_hash_method(Method m) { return m == Method::phash || m == Method::blockmean || m == Method::average; }

inline HashAlgorithm hash_algorithm_of(Method m) {
  switch (m) {
    case Method::phash: return HashAlgorithm::phash;
    case Method::blockmean: return HashAlgorithm::blockmean;
    case Method::average: return HashAlgorithm::average;
    default: break;
  }
  fail(ErrorKind::invalid_input, "method is not a hashing method");
}

/// Partition the encoder is trained on. Evaluation is always the test split.
enum class TrainingPartition { train, train_and_test, test };

inline std::string_view to_string(TrainingPartition p) {
  switch (p) {
    case TrainingPartition::train: return "inductive";
    case TrainingPartition::train_and_test: return "combined";
    case TrainingPartition::test: return "transductive";
  }
  return "?";
}

inline TrainingPartition parse_partition(std::string_view s) {
  if (s == "inductive" || s == "train") return TrainingPartition::train;
  if (s == "combined" || s == "train+test") return TrainingPartition::train_and_test;
  if (s == "transductive" || s == "test") return TrainingPartition::test;
  fail(ErrorKind::invalid_input, "unknown mode '" + std::string(s) + "' (inductive|transductive|combined)");
}

struct ExperimentSpec {
  Method method = Method::phash;
  TrainingPartition partition = TrainingPartition::train;
  TrainConfig train{};
  EncoderSpec encoder{};
  RetrievalRepr retrieval_repr = RetrievalRepr::h;
  std::uint64_t seed = 0;
  std::size_t map_k = 4;
  std::vector<std::size_t> precision_ks{1, 5, 10, 50};
  bool self_relevant = true;
  std::optional<fs::path> init_from;

  /// Canonical `key = value` text; hashed into reports for provenance.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    const auto& a = train.augmentation;
    os << "method = " << to_string(method) << "\nmode = " << to_string(partition) << "\nseed = " << seed
       << "\nlr = " << train.lr << "\nlr_decay = " << train.lr_decay << "\ndecay_every = " << train.decay_every
       << "\nepochs = " << train.epochs << "\nbatch_size = " << train.batch_size
       << "\ntemperature = " << train.temperature << "\nmargin = " << train.margin
       << "\nmask_ratio = " << train.mask_ratio
       << "\nmae_loss_scope = " << (train.mae_loss_scope == MaeLossScope::masked ? "masked" : "all")
       << "\ninput_size = " << encoder.input_size << "\nhidden_dim = " << encoder.hidden_dim
       << "\nrepr_dim = " << encoder.repr_dim << "\nproj_dim = " << encoder.proj_dim
       << "\npatch_size = " << encoder.patch_size
       << "\nretrieval_repr = " << (retrieval_repr == RetrievalRepr::h ? "h" : "z") << "\nmap_k = " << map_k
       << "\nself_relevant = " << (self_relevant ? "true" : "false")
       << "\ncrop_scale_min = " << a.params.crop_scale_min << "\ncrop_scale_max = " << a.params.crop_scale_max
       << "\nblur_sigma_min = " << a.params.blur_sigma_min << "\nblur_sigma_max = " << a.params.blur_sigma_max
       << "\nbrightness = " << a.params.brightness << "\ncontrast = " << a.params.contrast
       << "\ngamma_min = " << a.params.gamma_min << "\ngamma_max = " << a.params.gamma_max
       << "\ngrayscale_probability = " << a.params.grayscale_probability
       << "\nflip_probability = " << a.params.flip_probability << "\ncolor_probability = " << a.color_probability
       << "\nblur_probability = " << a.blur_probability << "\n";
    return os.str();
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Config files: `key = value` per line, `#` comments, optional quotes and
// [section] headers (ignored; keys are global).

inline std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    require(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  fail(ErrorKind::invalid_input, "config key '" + key + "': not a number: " + v);
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::logic_error&) {
  }
  fail(ErrorKind::invalid_input, "config key '" + key + "': not a non-negative integer: " + v);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::invalid_input, "config key '" + key + "': not a boolean: " + v);
}

}  // namespace detail

/// Applies config keys onto `spec`; unknown keys are an error.
inline void apply_config(ExperimentSpec& spec, const std::map<std::string, std::string>& kv) {
  auto& t = spec.train;
  auto& a = t.augmentation;
  for (const auto& [k, v] : kv) {
    using detail::to_bool, detail::to_double, detail::to_uint;
    if (k == "method") spec.method = parse_method(v);
    else if (k == "mode") spec.partition = parse_partition(v);
    else if (k == "seed") spec.seed = to_uint(k, v);
    else if (k == "lr") t.lr = to_double(k, v);
    else if (k == "lr_decay") t.lr_decay = to_double(k, v);
    else if (k == "decay_every") t.decay_every = to_uint(k, v);
    else if (k == "epochs") t.epochs = to_uint(k, v);
    else if (k == "batch_size") t.batch_size = to_uint(k, v);
    else if (k == "temperature") t.temperature = to_double(k, v);
    else if (k == "margin") t.margin = to_double(k, v);
    else if (k == "mask_ratio") t.mask_ratio = to_double(k, v);
    else if (k == "mae_loss_scope") {
      require(v == "masked" || v == "all", "mae_loss_scope must be masked or all");
      t.mae_loss_scope = v == "masked" ? MaeLossScope::masked : MaeLossScope::all;
    } else if (k == "input_size") spec.encoder.input_size = to_uint(k, v);
    else if (k == "hidden_dim") spec.encoder.hidden_dim = to_uint(k, v);
    else if (k == "repr_dim") spec.encoder.repr_dim = to_uint(k, v);
    else if (k == "proj_dim") spec.encoder.proj_dim = to_uint(k, v);
    else if (k == "patch_size") spec.encoder.patch_size = to_uint(k, v);
    else if (k == "retrieval_repr") {
      require(v == "h" || v == "z", "retrieval_repr must be h or z");
      spec.retrieval_repr = v == "h" ? RetrievalRepr::h : RetrievalRepr::z;
    } else if (k == "map_k") spec.map_k = to_uint(k, v);
    else if (k == "self_relevant") spec.self_relevant = to_bool(k, v);
    else if (k == "init_from") spec.init_from = fs::path(v);
    else if (k == "crop_scale_min") a.params.crop_scale_min = to_double(k, v);
    else if (k == "crop_scale_max") a.params.crop_scale_max = to_double(k, v);
    else if (k == "blur_sigma_min") a.params.blur_sigma_min = to_double(k, v);
    else if (k == "blur_sigma_max") a.params.blur_sigma_max = to_double(k, v);
    else if (k == "brightness") a.params.brightness = to_double(k, v);
    else if (k == "contrast") a.params.contrast = to_double(k, v);
    else if (k == "gamma_min") a.params.gamma_min = to_double(k, v);
    else if (k == "gamma_max") a.params.gamma_max = to_double(k, v);
    else if (k == "grayscale_probability") a.params.grayscale_probability = to_double(k, v);
    else if (k == "flip_probability") a.params.flip_probability = to_double(k, v);
    else if (k == "color_probability") a.color_probability = to_double(k, v);
    else if (k == "blur_probability") a.blur_probability = to_double(k, v);
    else fail(ErrorKind::invalid_input, "unknown config key '" + k + "'");
  }
}

inline void load_config_file(ExperimentSpec& spec, const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::io, "cannot read config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config(spec, parse_config_text(ss.str()));
}

// ---------------------------------------------------------------------------
// Training views

/// Pixel-only training input for self-supervised modes; carries no ids,
/// paths or group labels.
struct UnlabeledImages {
  std::vector<ImageGray> images;
};

/// Manifest positions the encoder may train on for a partition.
inline std::vector<std::size_t> training_selection(const CorpusManifest& manifest, TrainingPartition partition) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto s = manifest.records[i].split;
    const bool take = partition == TrainingPartition::train ? s == Split::train
                      : partition == TrainingPartition::test ? s == Split::test
                                                              : (s == Split::train || s == Split::test);
    if (take) out.push_back(i);
  }
  return out;
}

inline ImageGray to_input(const ImageGray& img, std::size_t size) {
  return img.width() == size && img.height() == size ? img : resize(img, size, size, Interpolation::area);
}

inline UnlabeledImages strip_labels(const Corpus& corpus, std::span<const std::size_t> selection, std::size_t size) {
  UnlabeledImages out;
  for (std::size_t i : selection) out.images.push_back(to_input(corpus.images[i], size));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runner

struct MetricsReport {
  Method method = Method::phash;
  TrainingPartition partition = TrainingPartition::train;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t train_images = 0;
  std::size_t eval_images = 0;
  std::size_t map_k = 4;
  double map = 0.0;
  std::vector<std::pair<std::size_t, std::optional<double>>> precision;  // K -> P@K (absent when K > eval size)
  std::optional<double> final_train_loss;
  std::optional<double> validation_loss;

  std::string csv() const {
    std::string out = "metric,value\n";
    char buf[128];
    auto row = [&](const std::string& k, const std::string& v) { out += k + "," + v + "\n"; };
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.10f", v);
      return std::string(buf);
    };
    row("method", std::string(to_string(method)));
    row("mode", std::string(to_string(partition)));
    row("seed", std::to_string(seed));
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash));
    row("config_hash", buf);
    row("train_images", std::to_string(train_images));
    row("eval_images", std::to_string(eval_images));
    row("mAP@" + std::to_string(map_k), num(map));
    for (const auto& [k, p] : precision) row("P@" + std::to_string(k), p ? num(*p) : "n/a");
    if (final_train_loss) row("final_train_loss", num(*final_train_loss));
    if (validation_loss) row("validation_loss", num(*validation_loss));
    return out;
  }

  std::string table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %s\n", "method", std::string(to_string(method)).c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "%-22s %s\n", "mode", std::string(to_string(partition)).c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "%-22s %llu (config %016llx)\n", "seed", static_cast<unsigned long long>(seed),
                  static_cast<unsigned long long>(config_hash));
    os << buf;
    std::snprintf(buf, sizeof buf, "%-22s %zu train / %zu eval\n", "images", train_images, eval_images);
    os << buf;
    std::snprintf(buf, sizeof buf, "%-22s %.4f\n", ("mAP@" + std::to_string(map_k)).c_str(), map);
    os << buf;
    for (const auto& [k, p] : precision) {
      if (p) std::snprintf(buf, sizeof buf, "%-22s %.4f\n", ("P@" + std::to_string(k)).c_str(), *p);
      else std::snprintf(buf, sizeof buf, "%-22s n/a\n", ("P@" + std::to_string(k)).c_str());
      os << buf;
    }
    if (final_train_loss) {
      std::snprintf(buf, sizeof buf, "%-22s %.6f\n", "final train loss", *final_train_loss);
      os << buf;
    }
    if (validation_loss) {
      std::snprintf(buf, sizeof buf, "%-22s %.6f\n", "validation loss", *validation_loss);
      os << buf;
    }
    return os.str();
  }
};

struct ExperimentResult {
  MetricsReport report;
  Index index;
  std::optional<Model> model;
  std::vector<EpochRecord> trace;
};

/// Builds an index over the given corpus positions with the method's
/// descriptor (hash, or the model's retrieval representation).
inline Index build_index(const Corpus& corpus, std::span<const std::size_t> selection, Method method,
                         const Model* model, RetrievalRepr repr = RetrievalRepr::h) {
  Index index;
  for (std::size_t i : selection) {
    const auto& rec = corpus.manifest.records[i];
    Descriptor d = is_hash_method(method) ? Descriptor{compute_hash(corpus.images[i], hash_algorithm_of(method))}
                                          : Descriptor{represent(corpus.images[i], *model, repr)};
    index.add({rec.image_id, std::move(d), rec.group_id});
  }
  return index;
}

/// Every entry queries the full index; relevance is group membership.
inline MetricsReport evaluate_index(const Index& index, std::size_t map_k, std::span<const std::size_t> precision_ks,
                                    bool self_relevant) {
  require(!index.empty(), "evaluation index is empty");
  std::map<std::int64_t, std::set<std::string>> groups;
  for (const auto& e : index.entries()) {
    require(e.group_id.has_value(), "evaluation needs a group label for '" + e.image_id + "'");
    groups[*e.group_id].insert(e.image_id);
  }
  std::size_t depth = map_k;
  for (auto k : precision_ks) depth = std::max(depth, k);
  std::vector<RetrievalResult> results;
  std::vector<std::set<std::string>> relevance;
  for (const auto& e : index.entries()) {
    results.push_back(index.query(e.image_id, depth));
    auto rel = groups.at(*e.group_id);
    if (!self_relevant) rel.erase(e.image_id);
    relevance.push_back(std::move(rel));
  }
  MetricsReport r;
  r.eval_images = index.size();
  r.map_k = map_k;
  r.map = map_at_k(results, relevance, map_k);
  for (auto k : precision_ks) {
    if (k > index.size()) {
      r.precision.emplace_back(k, std::nullopt);
      continue;
    }
    double sum = 0.0;
    for (std::size_t q = 0; q < results.size(); ++q) sum += precision_at_k(results[q], relevance[q], k);
    r.precision.emplace_back(k, sum / static_cast<double>(results.size()));
  }
  return r;
}

/// Initial weights shared by every partition of one seed.
inline Model initial_model(const ExperimentSpec& spec) {
  if (spec.init_from) return load_checkpoint(*spec.init_from);
  const auto seed = Rng::derive(spec.seed, 0x1417);
  return spec.method == Method::mae ? init_mae(spec.encoder, seed) : init_mlp(spec.encoder, seed);
}

namespace detail {

inline double validation_loss(const Corpus& corpus, const ExperimentSpec& spec, Model model) {
  std::vector<ImageGray> val;
  for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i)
    if (corpus.manifest.records[i].split == Split::val)
      val.push_back(to_input(corpus.images[i], model.spec.input_size));
  if (spec.method == Method::simclr) {
    if (val.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    std::vector<ImageGray> views;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto seed = Rng::derive(spec.seed ^ 0x7a1, i);
      views.push_back(augment_view(val[i], spec.train.augmentation, Rng::derive(seed, 0)));
      views.push_back(augment_view(val[i], spec.train.augmentation, Rng::derive(seed, 1)));
    }
    return simclr_batch_loss(views, model, spec.train.temperature, false);
  }
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<MaskPlan> plans;
  for (std::size_t i = 0; i < val.size(); ++i) {
    Rng rng(Rng::derive(spec.seed ^ 0x7a2, i));
    plans.push_back(make_mask_plan(model.spec.patch_count(), spec.train.mask_ratio, rng));
  }
  return mae_batch_loss(val, plans, model, spec.train.mae_loss_scope, false);
}

}  // namespace detail

/// Trains (if the method learns) on the chosen partition, indexes the test
/// split and scores every test image as a query against it.
inline ExperimentResult run_experiment(const ExperimentSpec& spec_in, const Corpus& corpus) {
  ExperimentSpec spec = spec_in;
  spec.train.seed = Rng::derive(spec.seed, 0x7ea1);
  spec.train.mode = spec.method == Method::supervised_ce        ? TrainMode::cross_entropy
                    : spec.method == Method::supervised_triplet ? TrainMode::triplet
                    : spec.method == Method::mae                ? TrainMode::mae
                                                                : TrainMode::simclr;
  std::vector<std::size_t> eval;
  for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i)
    if (corpus.manifest.records[i].split == Split::test) eval.push_back(i);
  require(!eval.empty(), "evaluation partition (test split) is empty");

  ExperimentResult out;
  std::size_t train_count = 0;
  if (!is_hash_method(spec.method)) {
    spec.train.validate();
    Model model = initial_model(spec);
    if (spec.init_from) spec.encoder = model.spec;
    const auto selection = training_selection(corpus.manifest, spec.partition);
    require(!selection.empty(), "training partition is empty");
    train_count = selection.size();
    TrainResult trained;
    if (spec.method == Method::simclr || spec.method == Method::mae) {
      const UnlabeledImages view = strip_labels(corpus, selection, model.spec.input_size);
      trained = spec.method == Method::simclr ? simclr_train(view.images, std::move(model), spec.train)
                                              : mae_train(view.images, std::move(model), spec.train);
    } else {
      std::vector<ImageGray> imgs;
      std::vector<std::optional<std::int64_t>> groups;
      for (std::size_t i : selection) {
        imgs.push_back(to_input(corpus.images[i], model.spec.input_size));
        groups.push_back(corpus.manifest.records[i].group_id);
      }
      trained = supervised_train(imgs, groups, std::move(model), spec.train);
    }
    out.trace = std::move(trained.trace);
    out.model = std::move(trained.model);
  }

  out.index = build_index(corpus, eval, spec.method, out.model ? &*out.model : nullptr, spec.retrieval_repr);
  out.report = evaluate_index(out.index, spec.map_k, spec.precision_ks, spec.self_relevant);
  out.report.method = spec.method;
  out.report.partition = spec.partition;
  out.report.seed = spec.seed;
  out.report.config_hash = fnv1a64(spec_in.canonical());
  out.report.train_images = train_count;
  if (!out.trace.empty()) out.report.final_train_loss = out.trace.back().loss;
  if (out.model && (spec.method == Method::simclr || spec.method == Method::mae)) {
    const double v = detail::validation_loss(corpus, spec, *out.model);
    if (std::isfinite(v)) out.report.validation_loss = v;
  }
  return out;
}

/// report.csv, report.txt, index.ndix and, for learned methods,
/// checkpoint.ndck and trace.csv.
inline void write_artifacts(const ExperimentResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  auto text = [](const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + p.string());
    out << s;
  };
  text(dir / "report.csv", result.report.csv());
  text(dir / "report.txt", result.report.table());
  save_index(result.index, dir / "index.ndix");
  if (result.model) {
    save_checkpoint(*result.model, dir / "checkpoint.ndck");
    text(dir / "trace.csv", trace_csv(result.trace));
  }
}

}  // namespace ndarchive
