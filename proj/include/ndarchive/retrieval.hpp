#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ndarchive/binio.hpp"
#include "ndarchive/codec.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/hashing.hpp"
#include "ndarchive/neural.hpp"

namespace ndarchive {

/// What an index stores, and therefore which distance it uses:
/// hashes -> normalized Hamming; unit embeddings -> Euclidean;
/// unnormalized embeddings -> cosine distance (1 - cos).
enum class DescriptorKind : std::uint8_t { hash = 0, unit_embedding = 1, raw_embedding = 2 };

inline std::string_view to_string(DescriptorKind k) {
  switch (k) {
    case DescriptorKind::hash: return "hash";
    case DescriptorKind::unit_embedding: return "embedding-euclidean";
    case DescriptorKind::raw_embedding: return "embedding-cosine";
  }
  return "?";
}

using Descriptor = std::variant<Embedding, PerceptualHash>;

struct IndexEntry {
  std::string image_id;
  Descriptor descriptor;
  std::optional<std::int64_t> group_id;
};

struct Neighbor {
  std::string image_id;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Neighbor> ranked;  // ascending distance, ties by ascending id
};

namespace detail {

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 2.0);
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace detail

/// Exact brute-force index. Const member functions are safe to call from
/// many threads; add() needs exclusive access.
class Index {
 public:
  Index() = default;

  // Descriptor kind and width are fixed by the first entry.
  void add(IndexEntry entry) {
    require(!entry.image_id.empty(), "empty image id");
    require(!positions_.contains(entry.image_id), "duplicate image id '" + entry.image_id + "'");
    const auto [kind, algorithm, dim] = describe(entry.descriptor);
    if (entries_.empty()) {
      kind_ = kind;
      algorithm_ = algorithm;
      dim_ = dim;
    } else {
      require(kind == kind_ && dim == dim_ && (kind != DescriptorKind::hash || algorithm == algorithm_),
              "descriptor of '" + entry.image_id + "' does not match the index kind");
    }
    positions_.emplace(entry.image_id, entries_.size());
    entries_.push_back(std::move(entry));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  DescriptorKind kind() const noexcept { return kind_; }
  HashAlgorithm hash_algorithm() const noexcept { return algorithm_; }
  std::size_t dimension() const noexcept { return dim_; }
  const std::vector<IndexEntry>& entries() const noexcept { return entries_; }

  bool contains(std::string_view id) const { return positions_.contains(std::string(id)); }

  const IndexEntry& at(std::string_view id) const {
    auto it = positions_.find(std::string(id));
    if (it == positions_.end()) fail(ErrorKind::not_found, "image id '" + std::string(id) + "'");
    return entries_[it->second];
  }

  double distance(const Descriptor& a, const Descriptor& b) const {
    if (kind_ == DescriptorKind::hash) return hamming(std::get<PerceptualHash>(a), std::get<PerceptualHash>(b)).normalized;
    const auto& ea = std::get<Embedding>(a).values;
    const auto& eb = std::get<Embedding>(b).values;
    require(ea.size() == eb.size(), "embedding dimensions differ");
    return kind_ == DescriptorKind::unit_embedding ? detail::euclidean(ea, eb) : detail::cosine_distance(ea, eb);
  }

  double distance(std::size_t i, std::size_t j) const { return distance(entries_[i].descriptor, entries_[j].descriptor); }

  /// Ranks every entry against `descriptor`, keeping the first k.
  std::vector<Neighbor> rank(const Descriptor& descriptor, std::size_t k) const {
    require(k >= 1, "K must be >= 1");
    std::vector<Neighbor> all;
    all.reserve(entries_.size());
    for (const auto& e : entries_) all.push_back({e.image_id, distance(descriptor, e.descriptor)});
    const auto keep = std::min(k, all.size());
    auto less = [](const Neighbor& a, const Neighbor& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.image_id < b.image_id;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), less);
    all.resize(keep);
    return all;
  }

  /// The query is part of the retrieval set and, at distance 0, ranks
  /// first unless an exact duplicate with a smaller id ties it.
  RetrievalResult query(std::string_view query_id, std::size_t k) const {
    const auto& q = at(query_id);
    return {q.image_id, rank(q.descriptor, k)};
  }

 private:
  struct Shape {
    DescriptorKind kind;
    HashAlgorithm algorithm;
    std::size_t dim;
  };

  static Shape describe(const Descriptor& d) {
    if (const auto* h = std::get_if<PerceptualHash>(&d)) return {DescriptorKind::hash, h->algorithm(), h->size()};
    const auto& e = std::get<Embedding>(d);
    require(!e.values.empty(), "empty embedding");
    for (double v : e.values) require(std::isfinite(v), "embedding has non-finite entries");
    return {e.normalized ? DescriptorKind::unit_embedding : DescriptorKind::raw_embedding, HashAlgorithm::average,
            e.values.size()};
  }

  std::vector<IndexEntry> entries_;
  std::unordered_map<std::string, std::size_t> positions_;
  DescriptorKind kind_ = DescriptorKind::hash;
  HashAlgorithm algorithm_ = HashAlgorithm::average;
  std::size_t dim_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics

inline double precision_at_k(const RetrievalResult& result, const std::set<std::string>& relevant, std::size_t k) {
  require(k >= 1, "K must be >= 1");
  require(k <= result.ranked.size(), "K exceeds the ranked list length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += relevant.contains(result.ranked[i].image_id);
  return static_cast<double>(hits) / static_cast<double>(k);
}

/// AP@K = (1 / min(R, K)) * sum_{k<=K} rel(k) * P@k.
inline double average_precision_at_k(const RetrievalResult& result, const std::set<std::string>& relevant,
                                     std::size_t k) {
  require(!relevant.empty(), "query '" + result.query_id + "' has no relevant items");
  require(k >= 1, "K must be >= 1");
  const std::size_t depth = std::min(k, result.ranked.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.contains(result.ranked[i].image_id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

inline double map_at_k(std::span<const RetrievalResult> results, std::span<const std::set<std::string>> relevance,
                       std::size_t k) {
  require(!results.empty(), "no queries");
  require(results.size() == relevance.size(), "one relevant set per query required");
  double sum = 0.0;
  for (std::size_t q = 0; q < results.size(); ++q) sum += average_precision_at_k(results[q], relevance[q], k);
  return sum / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Clustering

struct DuplicateCluster {
  std::size_t cluster_id = 0;
  std::vector<std::string> member_ids;  // ascending
  double threshold_used = 0.0;
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

/// Connected components of the graph with an edge wherever distance <=
/// threshold. Clusters are numbered by their smallest member id.
inline std::vector<DuplicateCluster> cluster(const Index& index, double threshold) {
  require(threshold >= 0.0, "threshold must be >= 0");
  const auto n = index.size();
  detail::DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (index.distance(i, j) <= threshold) sets.unite(i, j);
  std::unordered_map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[sets.find(i)].push_back(index.entries()[i].image_id);
  std::vector<DuplicateCluster> out;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    out.push_back({0, std::move(members), threshold});
  }
  std::sort(out.begin(), out.end(),
            [](const DuplicateCluster& a, const DuplicateCluster& b) { return a.member_ids[0] < b.member_ids[0]; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].cluster_id = i;
  return out;
}

/// Member minimizing the summed distance to the others (ties: smallest id).
inline std::string medoid(const Index& index, std::span<const std::string> members) {
  require(!members.empty(), "empty cluster");
  std::string best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& a : members) {
    double cost = 0.0;
    for (const auto& b : members) cost += index.distance(index.at(a).descriptor, index.at(b).descriptor);
    if (cost < best_cost || (cost == best_cost && a < best)) {
      best = a;
      best_cost = cost;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Persistence: "NDIX", u16 version, kind tag, hash algorithm tag,
// dimension or bit length, entry count, then per entry the id, the
// descriptor payload and an optional group id.

inline constexpr std::uint16_t kIndexVersion = 1;

inline std::vector<std::uint8_t> serialize_index(const Index& index) {
  binio::Writer w;
  w.raw("NDIX");
  w.u16(kIndexVersion);
  w.u8(static_cast<std::uint8_t>(index.kind()));
  w.u8(static_cast<std::uint8_t>(index.hash_algorithm()));
  w.u32(static_cast<std::uint32_t>(index.dimension()));
  w.u64(index.size());
  for (const auto& e : index.entries()) {
    w.str(e.image_id);
    if (const auto* h = std::get_if<PerceptualHash>(&e.descriptor)) {
      w.bytes(h->bytes());
    } else {
      for (double v : std::get<Embedding>(e.descriptor).values) w.f64(v);
    }
    w.u8(e.group_id.has_value());
    w.i64(e.group_id.value_or(0));
  }
  return w.take();
}

inline Index deserialize_index(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "index");
  r.magic("NDIX");
  const auto version = r.u16();
  require(version == kIndexVersion, "unsupported index version " + std::to_string(version));
  const auto kind_tag = r.u8();
  require(kind_tag <= 2, "unknown descriptor kind tag");
  const auto kind = static_cast<DescriptorKind>(kind_tag);
  const auto alg_tag = r.u8();
  require(alg_tag <= 2, "unknown hash algorithm tag");
  const auto algorithm = static_cast<HashAlgorithm>(alg_tag);
  const auto dim = r.u32();
  if (kind == DescriptorKind::hash) require(dim == hash_bits(algorithm), "hash bit length does not match algorithm");
  const auto count = r.u64();
  Index index;
  for (std::uint64_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.image_id = r.str();
    if (kind == DescriptorKind::hash) {
      const auto b = r.bytes(dim / 8);
      e.descriptor = PerceptualHash::from_bytes(algorithm, {b.begin(), b.end()});
    } else {
      Embedding emb{std::vector<double>(dim), kind == DescriptorKind::unit_embedding};
      for (double& v : emb.values) v = r.f64();
      e.descriptor = std::move(emb);
    }
    const bool has_group = r.u8() != 0;
    const auto group = r.i64();
    if (has_group) e.group_id = group;
    index.add(std::move(e));
  }
  require(r.done(), "index: trailing bytes");
  return index;
}

inline void save_index(const Index& index, const std::filesystem::path& path) {
  write_file(path, serialize_index(index));
}

inline Index load_index(const std::filesystem::path& path) { return deserialize_index(read_file(path)); }

}  // namespace ndarchive
