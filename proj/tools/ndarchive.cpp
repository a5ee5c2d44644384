#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "ndarchive/ndarchive.hpp"
#include "ndarchive/service.hpp"

namespace fs = std::filesystem;
using namespace ndarchive;

namespace {

std::atomic<bool> g_stop{false};

struct ExperimentFlags {
  std::string method;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string init_from;
  std::string default_method;

  void attach(CLI::App* cmd, const std::string& fallback) {
    method = default_method = fallback;
    cmd->add_option("--method", method, "phash|blockmean|average|supervised-ce|supervised-triplet|simclr|mae")
        ->capture_default_str();
    cmd->add_option("--mode", mode, "Training partition: inductive|transductive|combined");
    cmd->add_option("--seed", seed, "Experiment seed");
    cmd->add_option("--config", config, "key = value config file");
    cmd->add_option("--init-from", init_from, "Start from this checkpoint instead of a seeded init");
  }

  // Config file first, explicit flags override it.
  ExperimentSpec spec(const CLI::App* cmd) const {
    ExperimentSpec s;
    s.method = parse_method(default_method);
    if (!config.empty()) load_config_file(s, config);
    if (cmd->count("--method")) s.method = parse_method(method);
    if (!mode.empty()) s.partition = parse_partition(mode);
    if (seed) s.seed = *seed;
    if (!init_from.empty()) s.init_from = fs::path(init_from);
    return s;
  }
};

void report_skipped(const Corpus& corpus) {
  for (const auto& s : corpus.skipped) std::cerr << "skipped " << s << "\n";
}

std::string fmt_distance(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", d);
  return buf;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::invalid_input:
    case ErrorKind::not_found:
    case ErrorKind::incomparable_hash: return 1;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Near-duplicate image retrieval: hashing, self-supervised embeddings, evaluation and review"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  std::string data_dir = default_data_dir().string();
  app.add_option("--data-dir", data_dir, "Artifact root (default $NDARCHIVE_DATA_DIR or ./ndarchive-data)");

  auto in_data = [&](const char* rel) { return (fs::path(data_dir) / rel).string(); };

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic near-duplicate corpus");
  SyntheticCorpusSpec synth_spec;
  std::string strength = "mild", synth_out;
  synth->add_option("--groups", synth_spec.group_count, "Number of duplicate groups")->capture_default_str();
  synth->add_option("--per-group", synth_spec.duplicates_per_group, "Images per group")->capture_default_str();
  synth->add_option("--size", synth_spec.image_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--strength", strength, "exact|mild|strong")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Corpus seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory (default <data-dir>/corpus)");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a manifest or scan a folder and print the manifest");
  std::string corpus_path;
  ingest_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder (default <data-dir>/corpus)");

  // hash
  auto* hash_cmd = app.add_subcommand("hash", "Print perceptual hashes");
  std::string hash_algo = "phash", hash_image;
  hash_cmd->add_option("--algorithm", hash_algo, "average|phash|blockmean")->capture_default_str();
  hash_cmd->add_option("--image", hash_image, "Hash a single file instead of the corpus");
  hash_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an encoder and write checkpoint, trace and report");
  ExperimentFlags train_flags;
  std::string train_out;
  train_flags.attach(train_cmd, "simclr");
  train_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder");
  train_cmd->add_option("--out", train_out, "Artifact directory (default <data-dir>/model)");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Build a retrieval index (hashes or embeddings)");
  std::string embed_method = "phash", checkpoint, embed_out, split = "all", repr = "h";
  embed_cmd->add_option("--method", embed_method, "phash|blockmean|average, or any learned method")
      ->capture_default_str();
  embed_cmd->add_option("--checkpoint", checkpoint, "Encoder checkpoint for learned methods");
  embed_cmd->add_option("--repr", repr, "Embedding used for retrieval: h|z")->capture_default_str();
  embed_cmd->add_option("--split", split, "all|train|val|test")->capture_default_str();
  embed_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder");
  embed_cmd->add_option("--out", embed_out, "Index file (default <data-dir>/index.ndix)");

  // query
  auto* query_cmd = app.add_subcommand("query", "Print the k nearest neighbours of an indexed image");
  std::string index_path, query_id;
  std::size_t k = 5;
  query_cmd->add_option("--image", query_id, "Query image id")->required();
  query_cmd->add_option("--k", k, "Neighbours to return")->capture_default_str()->check(CLI::PositiveNumber);
  query_cmd->add_option("--index", index_path, "Index file (default <data-dir>/index.ndix)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Run an experiment and print its metrics table");
  ExperimentFlags eval_flags;
  std::string eval_out;
  eval_flags.attach(eval_cmd, "phash");
  eval_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder");
  eval_cmd->add_option("--out", eval_out, "Also write report, index and checkpoint here");

  // cluster
  auto* cluster_cmd = app.add_subcommand("cluster", "Group indexed images under a distance threshold");
  double threshold = 0.1;
  bool singletons = false;
  cluster_cmd->add_option("--threshold", threshold, "Distance threshold")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  cluster_cmd->add_flag("--singletons", singletons, "Also list single-image clusters");
  cluster_cmd->add_option("--index", index_path, "Index file");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the review API");
  std::string bind, reviews, static_dir;
  serve_cmd->add_option("--bind", bind, "host:port (default $NDARCHIVE_BIND or 127.0.0.1:8080)");
  serve_cmd->add_option("--index", index_path, "Index file");
  serve_cmd->add_option("--corpus", corpus_path, "Manifest file or image folder");
  serve_cmd->add_option("--reviews", reviews, "Review log (default <data-dir>/reviews.log)");
  serve_cmd->add_option("--threshold", threshold, "Default cluster threshold")->capture_default_str();
  serve_cmd->add_option("--static", static_dir, "Serve review UI assets from this directory at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const auto corpus_arg = [&] { return corpus_path.empty() ? in_data("corpus") : corpus_path; };
  const auto index_arg = [&] { return index_path.empty() ? in_data("index.ndix") : index_path; };

  try {
    if (*synth) {
      synth_spec.strength = parse_variant_strength(strength);
      const auto out = synth_out.empty() ? in_data("corpus") : synth_out;
      const auto corpus = generate_corpus(synth_spec);
      write_corpus(corpus, out);
      std::cout << "wrote " << corpus.images.size() << " images to " << out << "\n";
    } else if (*ingest_cmd) {
      const auto corpus = ingest(corpus_arg());
      report_skipped(corpus);
      std::cout << corpus.manifest.to_tsv();
    } else if (*hash_cmd) {
      const auto algo = hash_algorithm_of(parse_method(hash_algo));
      if (!hash_image.empty()) {
        std::cout << compute_hash(load_gray(hash_image), algo).to_string() << "\n";
      } else {
        const auto corpus = ingest(corpus_arg());
        report_skipped(corpus);
        for (std::size_t i = 0; i < corpus.images.size(); ++i)
          std::cout << corpus.manifest.records[i].image_id << "\t" << compute_hash(corpus.images[i], algo).to_string()
                    << "\n";
      }
    } else if (*train_cmd) {
      const auto spec = train_flags.spec(train_cmd);
      require(!is_hash_method(spec.method), "train needs a learned method");
      const auto corpus = ingest(corpus_arg());
      report_skipped(corpus);
      const auto result = run_experiment(spec, corpus);
      const auto out = train_out.empty() ? in_data("model") : train_out;
      write_artifacts(result, out);
      std::cout << trace_csv(result.trace);
    } else if (*embed_cmd) {
      const auto method = parse_method(embed_method);
      require(repr == "h" || repr == "z", "--repr must be h or z");
      const auto corpus = ingest(corpus_arg());
      report_skipped(corpus);
      std::vector<std::size_t> selection;
      for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i)
        if (split == "all" || corpus.manifest.records[i].split == parse_split(split)) selection.push_back(i);
      std::optional<Model> model;
      if (!is_hash_method(method))
        model = load_checkpoint(checkpoint.empty() ? in_data("model/checkpoint.ndck") : checkpoint);
      const auto index = build_index(corpus, selection, method, model ? &*model : nullptr,
                                     repr == "h" ? RetrievalRepr::h : RetrievalRepr::z);
      const auto out = embed_out.empty() ? in_data("index.ndix") : embed_out;
      save_index(index, out);
      std::cout << "indexed " << index.size() << " images (" << to_string(index.kind()) << ") to " << out << "\n";
    } else if (*query_cmd) {
      const auto index = load_index(index_arg());
      const auto result = index.query(query_id, k);
      std::cout << "rank,image_id,distance\n";
      for (std::size_t r = 0; r < result.ranked.size(); ++r)
        std::cout << r + 1 << "," << result.ranked[r].image_id << "," << fmt_distance(result.ranked[r].distance)
                  << "\n";
    } else if (*eval_cmd) {
      const auto spec = eval_flags.spec(eval_cmd);
      const auto corpus = ingest(corpus_arg());
      report_skipped(corpus);
      const auto result = run_experiment(spec, corpus);
      if (!eval_out.empty()) write_artifacts(result, eval_out);
      std::cout << result.report.table();
    } else if (*cluster_cmd) {
      const auto index = load_index(index_arg());
      std::cout << "cluster_id,size,members\n";
      for (const auto& c : cluster(index, threshold)) {
        if (!singletons && c.member_ids.size() < 2) continue;
        std::cout << c.cluster_id << "," << c.member_ids.size() << ",";
        for (std::size_t i = 0; i < c.member_ids.size(); ++i) std::cout << (i ? ";" : "") << c.member_ids[i];
        std::cout << "\n";
      }
    } else if (*serve_cmd) {
      if (bind.empty()) {
        const char* env = std::getenv("NDARCHIVE_BIND");
        bind = env && *env ? env : "127.0.0.1:8080";
      }
      const auto [host, port] = parse_bind(bind);
      const auto index = load_index(index_arg());
      const auto corpus_file = fs::path(corpus_arg());
      const auto manifest_file = fs::is_directory(corpus_file) ? corpus_file / "manifest.tsv" : corpus_file;
      const auto manifest = CorpusManifest::load(manifest_file);
      ServiceConfig cfg;
      cfg.reviews_path = reviews.empty() ? in_data("reviews.log") : reviews;
      cfg.default_threshold = threshold;
      if (!static_dir.empty()) cfg.static_dir = fs::path(static_dir);
      Service service(index, manifest, manifest_file.parent_path(), cfg);
      auto& server = service.server();
      if (!server.bind_to_port(host, port)) {
        std::cerr << "error: cannot bind " << host << ":" << port << "\n";
        return 2;
      }
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
      });
      std::cerr << "serving " << index.size() << " images on http://" << host << ":" << port << "\n";
      server.listen_after_bind();
      g_stop = true;
      watcher.join();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
