#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ndarchive/codec.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/manifest.hpp"
#include "ndarchive/retrieval.hpp"

namespace ndarchive {

enum class Verdict { duplicate, distinct, unsure };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::duplicate: return "duplicate";
    case Verdict::distinct: return "distinct";
    case Verdict::unsure: return "unsure";
  }
  return "?";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "duplicate") return Verdict::duplicate;
  if (s == "distinct") return Verdict::distinct;
  if (s == "unsure") return Verdict::unsure;
  return std::nullopt;
}

struct ReviewDecision {
  std::string image_a;  // image_a < image_b
  std::string image_b;
  Verdict verdict = Verdict::unsure;
  std::string reviewer;
  std::int64_t timestamp = 0;  // UTC seconds

  friend bool operator==(const ReviewDecision&, const ReviewDecision&) = default;
};

namespace csv {

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace csv

inline std::string to_csv_row(const ReviewDecision& d) {
  return csv::quote(d.image_a) + "," + csv::quote(d.image_b) + "," + std::string(to_string(d.verdict)) + "," +
         csv::quote(d.reviewer) + "," + std::to_string(d.timestamp);
}

/// Append-only decision log, one CSV row per line; replayed on open with
/// later lines superseding earlier ones for the same pair. Appends are
/// serialized through one mutex.
class ReviewLog {
 public:
  explicit ReviewLog(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = csv::split(line);
      const auto verdict = f.size() == 5 ? parse_verdict(f[2]) : std::nullopt;
      // A torn final line from a crash is ignored; anything else is corrupt.
      if (!verdict) {
        if (in.peek() == EOF) break;
        fail(ErrorKind::invalid_input, path_.string() + ":" + std::to_string(line_no) + ": malformed review record");
      }
      ReviewDecision d{f[0], f[1], *verdict, f[3], std::stoll(f[4])};
      latest_[{d.image_a, d.image_b}] = std::move(d);
    }
  }

  void append(const ReviewDecision& d) {
    std::lock_guard lock(mutex_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot append to " + path_.string());
    out << to_csv_row(d) << '\n';
    out.flush();
    if (!out) fail(ErrorKind::io, "write to " + path_.string() + " failed");
    latest_[{d.image_a, d.image_b}] = d;
  }

  std::vector<ReviewDecision> latest() const {
    std::lock_guard lock(mutex_);
    std::vector<ReviewDecision> out;
    for (const auto& [pair, d] : latest_) out.push_back(d);
    return out;
  }

  std::string export_csv() const {
    std::string out = "image_a,image_b,verdict,reviewer,timestamp\n";
    for (const auto& d : latest()) out += to_csv_row(d) + "\n";
    return out;
  }

  bool contains(const std::string& a, const std::string& b) const {
    std::lock_guard lock(mutex_);
    return latest_.contains({a, b});
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, ReviewDecision> latest_;
};

struct ServiceConfig {
  std::filesystem::path reviews_path = "reviews.log";
  double default_threshold = 0.1;
  std::string cors_origin = "*";
  std::optional<std::filesystem::path> static_dir;  // review UI assets served from "/"
};

inline std::string url_encode(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

/// HTTP facade over an immutable index and its manifest. Read endpoints
/// have no side effects; POST /api/review is the only write path.
class Service {
 public:
  Service(const Index& index, const CorpusManifest& manifest, std::filesystem::path corpus_root, ServiceConfig config)
      : index_(index), root_(std::move(corpus_root)), config_(std::move(config)), reviews_(config_.reviews_path) {
    for (const auto& r : manifest.records) paths_[r.image_id] = r.path;
    for (const auto& e : index_.entries())
      require(paths_.contains(e.image_id), "indexed image '" + e.image_id + "' is missing from the manifest");
    routes();
  }

  httplib::Server& server() { return server_; }
  const ReviewLog& reviews() const { return reviews_; }

  /// Clusters at `threshold`, cached per threshold.
  std::vector<DuplicateCluster> clusters(double threshold) {
    std::lock_guard lock(cache_mutex_);
    auto it = cluster_cache_.find(threshold);
    if (it == cluster_cache_.end()) it = cluster_cache_.emplace(threshold, cluster(index_, threshold)).first;
    return it->second;
  }

 private:
  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, {{"error", message}}, status);
  }

  static std::optional<double> number_param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    const auto v = req.get_param_value(key);
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::logic_error&) {
      fail(ErrorKind::invalid_input, std::string("query parameter '") + key + "' is not a number");
    }
    require(used == v.size() && std::isfinite(d), std::string("query parameter '") + key + "' is not a number");
    return d;
  }

  std::string thumb_url(const std::string& id) const { return "/api/images/" + url_encode(id) + "/thumb"; }

  std::filesystem::path file_of(const std::string& id) const {
    auto it = paths_.find(id);
    if (it == paths_.end()) fail(ErrorKind::not_found, "image id '" + id + "'");
    const std::filesystem::path p(it->second);
    return p.is_absolute() ? p : root_ / p;
  }

  nlohmann::json cluster_json(const DuplicateCluster& c) const {
    const auto center = medoid(index_, c.member_ids);
    nlohmann::json members = nlohmann::json::array();
    for (const auto& id : c.member_ids)
      members.push_back({{"image_id", id},
                         {"thumbnail_url", thumb_url(id)},
                         {"distance_to_medoid", index_.distance(index_.at(id).descriptor, index_.at(center).descriptor)}});
    return {{"cluster_id", c.cluster_id}, {"medoid", center}, {"threshold", c.threshold_used}, {"members", members}};
  }

  template <typename Handler>
  auto guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        const int status = e.kind() == ErrorKind::not_found ? 404
                           : (e.kind() == ErrorKind::invalid_input || e.kind() == ErrorKind::incomparable_hash) ? 400
                                                                                                                 : 500;
        send_error(res, status, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get(R"(/api/images/(.+)/neighbors)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto k = number_param(req, "k").value_or(10.0);
      require(k >= 1.0 && k == std::floor(k), "k must be a positive integer");
      const auto result = index_.query(req.matches[1].str(), static_cast<std::size_t>(k));
      nlohmann::json out = nlohmann::json::array();
      for (const auto& n : result.ranked) out.push_back({{"image_id", n.image_id}, {"distance", n.distance}});
      send_json(res, out);
    }));

    server_.Get("/api/clusters", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const double threshold = number_param(req, "threshold").value_or(config_.default_threshold);
      require(threshold >= 0.0, "threshold must be >= 0");
      const bool singletons = req.has_param("singletons") && req.get_param_value("singletons") == "true";
      nlohmann::json list = nlohmann::json::array();
      for (const auto& c : clusters(threshold))
        if (singletons || c.member_ids.size() > 1) list.push_back(cluster_json(c));
      send_json(res, {{"threshold", threshold}, {"clusters", list}});
    }));

    server_.Get(R"(/api/images/(.+)/file)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto bytes = read_file(file_of(req.matches[1].str()));
      const auto fmt = sniff_format(bytes);
      res.set_content(std::string(bytes.begin(), bytes.end()),
                      fmt == ImageFormat::png ? "image/png" : fmt == ImageFormat::jpeg ? "image/jpeg"
                                                                                       : "application/octet-stream");
    }));

    server_.Get(R"(/api/images/(.+)/thumb)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto jpeg = encode_jpeg(thumbnail(load_gray(file_of(req.matches[1].str())), 256));
      res.set_content(std::string(jpeg.begin(), jpeg.end()), "image/jpeg");
    }));

    server_.Post("/api/review", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) return send_error(res, 400, "body must be a JSON object");
      auto text = [&](const char* key) -> std::optional<std::string> {
        if (!body.contains(key) || !body[key].is_string()) return std::nullopt;
        return body[key].get<std::string>();
      };
      auto a = text("image_a"), b = text("image_b"), verdict = text("verdict");
      if (!a || !b) return send_error(res, 400, "image_a and image_b are required strings");
      if (!verdict || !parse_verdict(*verdict)) return send_error(res, 400, "verdict must be duplicate, distinct or unsure");
      if (*a == *b) return send_error(res, 400, "a review pair needs two distinct images");
      if (!index_.contains(*a) || !index_.contains(*b)) return send_error(res, 400, "unknown image id in pair");
      if (*b < *a) std::swap(a, b);
      std::int64_t ts = std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::system_clock::now().time_since_epoch()).count();
      if (body.contains("timestamp")) {
        if (!body["timestamp"].is_number_integer()) return send_error(res, 400, "timestamp must be an integer");
        ts = body["timestamp"].get<std::int64_t>();
      }
      ReviewDecision d{*a, *b, *parse_verdict(*verdict), text("reviewer").value_or(""), ts};
      reviews_.append(d);
      send_json(res,
                {{"image_a", d.image_a}, {"image_b", d.image_b}, {"verdict", to_string(d.verdict)},
                 {"reviewer", d.reviewer}, {"timestamp", d.timestamp}},
                201);
    }));

    server_.Get("/api/review/export", guarded([this](const httplib::Request&, httplib::Response& res) {
      res.set_content(reviews_.export_csv(), "text/csv");
    }));

    server_.Get("/api/stats", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const double threshold = number_param(req, "threshold").value_or(config_.default_threshold);
      require(threshold >= 0.0, "threshold must be >= 0");
      std::size_t multi = 0, candidates = 0, reviewed = 0;
      for (const auto& c : clusters(threshold)) {
        if (c.member_ids.size() < 2) continue;
        ++multi;
        for (std::size_t i = 0; i < c.member_ids.size(); ++i)
          for (std::size_t j = i + 1; j < c.member_ids.size(); ++j) {
            ++candidates;
            reviewed += reviews_.contains(c.member_ids[i], c.member_ids[j]);
          }
      }
      send_json(res, {{"corpus_size", index_.size()},
                      {"descriptor_kind", to_string(index_.kind())},
                      {"threshold", threshold},
                      {"cluster_count", multi},
                      {"candidate_pairs", candidates},
                      {"reviewed_pairs", reviewed},
                      {"decisions", reviews_.latest().size()},
                      {"review_progress", candidates == 0 ? 1.0 : static_cast<double>(reviewed) / candidates}});
    }));

    if (config_.static_dir) server_.set_mount_point("/", config_.static_dir->string());
  }

  static ImageGray thumbnail(const ImageGray& img, std::size_t longest) {
    const double scale = static_cast<double>(longest) / static_cast<double>(std::max(img.width(), img.height()));
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width() * scale)));
    const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height() * scale)));
    return resize(img, w, h, scale < 1.0 ? Interpolation::area : Interpolation::bilinear);
  }

  const Index& index_;
  std::filesystem::path root_;
  ServiceConfig config_;
  ReviewLog reviews_;
  std::map<std::string, std::string> paths_;
  httplib::Server server_;
  std::mutex cache_mutex_;
  std::map<double, std::vector<DuplicateCluster>> cluster_cache_;
};

/// Splits "host:port"; a bare port binds 127.0.0.1.
inline std::pair<std::string, int> parse_bind(std::string_view bind) {
  const auto colon = bind.rfind(':');
  const std::string host = colon == std::string_view::npos ? "127.0.0.1" : std::string(bind.substr(0, colon));
  const std::string port = colon == std::string_view::npos ? std::string(bind) : std::string(bind.substr(colon + 1));
  int p = -1;
  try {
    std::size_t used = 0;
    p = std::stoi(port, &used);
    if (used != port.size()) p = -1;
  } catch (const std::logic_error&) {
  }
  require(p >= 0 && p <= 65535, "bad bind address '" + std::string(bind) + "'");
  return {host.empty() ? "127.0.0.1" : host, p};
}

}  // namespace ndarchive
