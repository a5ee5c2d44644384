#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ndarchive/error.hpp"

namespace ndarchive {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorKind::invalid_input, "unknown split '" + std::string(s) + "'");
}

struct ManifestRecord {
  std::string image_id;
  std::string path;  // relative to the manifest's directory unless absolute
  std::optional<std::int64_t> group_id;
  Split split = Split::test;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Image records with ground-truth groups (when known) and split.
/// Serialized as TSV: `image_id<TAB>path<TAB>group_id<TAB>split`, `-`
/// for an unknown group.
struct CorpusManifest {
  std::vector<ManifestRecord> records;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
      require(!r.image_id.empty(), "empty image id");
      require(r.image_id.find_first_of("\t\n") == std::string::npos, "image id contains tab or newline");
      require(seen.insert(r.image_id).second, "duplicate image id '" + r.image_id + "'");
    }
  }

  std::vector<const ManifestRecord*> in_split(Split s) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }

  std::string to_tsv() const {
    std::ostringstream os;
    for (const auto& r : records) {
      os << r.image_id << '\t' << r.path << '\t';
      if (r.group_id) os << *r.group_id; else os << '-';
      os << '\t' << to_string(r.split) << '\n';
    }
    return os.str();
  }

  static CorpusManifest from_tsv(std::string_view text) {
    CorpusManifest m;
    std::size_t line_no = 0;
    std::istringstream is{std::string(text)};
    std::string line;
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
        fields.push_back(line.substr(start, tab - start));
      fields.push_back(line.substr(start));
      require(fields.size() == 4, "manifest line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
      ManifestRecord r;
      r.image_id = fields[0];
      r.path = fields[1];
      if (fields[2] != "-") {
        try {
          std::size_t used = 0;
          r.group_id = std::stoll(fields[2], &used);
          require(used == fields[2].size(), "trailing characters");
        } catch (const std::logic_error&) {
          fail(ErrorKind::invalid_input, "manifest line " + std::to_string(line_no) + ": bad group id");
        }
      }
      r.split = parse_split(fields[3]);
      m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
  }

  void save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + file.string());
    out << to_tsv();
  }

  static CorpusManifest load(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read manifest " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_tsv(ss.str());
  }
};

}  // namespace ndarchive
