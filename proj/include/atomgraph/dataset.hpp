#pragma once

// Labeled corpus manifests, bytecode file loading and stratified splitting.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atomgraph/error.hpp"
#include "atomgraph/evm.hpp"
#include "atomgraph/rng.hpp"

namespace atomgraph::dataset {

struct ManifestRecord {
  std::string id;
  std::filesystem::path path;
  int label = 0;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::uint64_t split_seed = 1;
  double train_fraction = 0.9;
};

/// Parses `id:<id> path:<path> label:<0|1>` records, one per line. Blank
/// lines and `#` comments are skipped; relative paths resolve against `base`.
inline DatasetManifest parse_manifest(std::istream& is, const std::filesystem::path& base = {}) {
  DatasetManifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::map<std::string, std::string> kv;
    std::string field;
    while (fields >> field) {
      const auto colon = field.find(':');
      if (colon == std::string::npos || colon == 0) {
        throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": field without key: " + field, line_no);
      }
      const auto key = field.substr(0, colon);
      if (!kv.emplace(key, field.substr(colon + 1)).second) {
        throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": repeated key " + key, line_no);
      }
    }
    for (const char* key : {"id", "path", "label"}) {
      if (!kv.count(key) || kv[key].empty()) {
        throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": missing " + key, line_no);
      }
    }
    if (kv.size() != 3) throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": unknown field", line_no);
    const auto& label = kv["label"];
    if (label != "0" && label != "1") {
      throw Error(Errc::InvalidLabel, "line " + std::to_string(line_no) + ": label must be 0 or 1, got " + label, line_no);
    }
    if (!seen.insert(kv["id"]).second) {
      throw Error(Errc::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id " + kv["id"], line_no);
    }
    std::filesystem::path p = kv["path"];
    if (p.is_relative() && !base.empty()) p = base / p;
    m.records.push_back({kv["id"], p, label == "1" ? 1 : 0});
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& os, const DatasetManifest& m, const std::filesystem::path& base = {}) {
  for (const auto& r : m.records) {
    const auto p = base.empty() ? r.path : std::filesystem::relative(r.path, base);
    os << "id:" << r.id << " path:" << p.generic_string() << " label:" << r.label << '\n';
  }
}

enum class BytecodeFormat { Auto, Hex, Binary };

/// Reads a contract file. Auto treats the file as hex when every
/// non-whitespace character (after an optional 0x) is a hex digit.
inline evm::Bytecode load_bytecode(const std::filesystem::path& path, BytecodeFormat format = BytecodeFormat::Auto,
                                   std::string source_id = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (source_id.empty()) source_id = path.stem().string();
  auto looks_hex = [&] {
    std::string_view s = raw;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
  };
  if (format == BytecodeFormat::Hex || (format == BytecodeFormat::Auto && looks_hex())) {
    return evm::decode_hex(raw, std::move(source_id));
  }
  if (raw.empty()) throw Error(Errc::EmptyInput, "empty bytecode file " + path.string());
  evm::Bytecode code;
  code.source_id = std::move(source_id);
  code.bytes.assign(raw.begin(), raw.end());
  return code;
}

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

namespace detail {

struct LabeledId {
  std::string id;
  int label;
};

inline Split stratified_split(const std::vector<LabeledId>& items, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "train fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::string>> by_class(2);
  for (const auto& it : items) by_class[static_cast<std::size_t>(it.label)].push_back(it.id);
  for (std::size_t c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw Error(Errc::ClassTooSmall, "class " + std::to_string(c) + " has fewer than two members");
    }
    std::sort(by_class[c].begin(), by_class[c].end());
  }
  // Largest-remainder allocation: the overall train count is round(f * N) and
  // each class receives floor or ceil of f * N_c.
  const auto total_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(items.size())));
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double exact = train_fraction * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  while (assigned < total_train) {
    const std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
    if (quota[c] >= by_class[c].size()) break;
    ++quota[c];
    remainder[c] = -1.0;
    ++assigned;
  }
  Split out;
  Rng rng(mix_seed(seed, 0x73706c6974ULL));
  for (std::size_t c = 0; c < 2; ++c) {
    auto ids = by_class[c];
    rng.shuffle(std::span<std::string>(ids));
    out.train.insert(out.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    out.test.insert(out.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(quota[c]), ids.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace detail

/// Stratified, seeded train/test split over manifest ids.
inline Split split(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  std::vector<detail::LabeledId> items;
  for (const auto& r : manifest.records) items.push_back({r.id, r.label});
  return detail::stratified_split(items, train_fraction, seed);
}

/// FNV-1a over the ordered id lists; identical splits hash identically.
inline std::uint64_t split_hash(const std::vector<std::vector<std::string>>& folds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& fold : folds) {
    for (const auto& id : fold) feed(id);
    feed("|");
  }
  return h;
}

}  // namespace atomgraph::dataset
