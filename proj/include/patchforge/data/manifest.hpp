// Copyright 2026 The patchforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Manifest files are newline-delimited JSON: one header line
//   {"schema":"patchforge/1","classes":[...],"provenance":{...}}
// followed by one object per patch with exactly the fields
//   id, slide, x, y, size, label, variant, orig_index, alive, truth
// sorted by id. `slide` is relative to the corpus directory.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "patchforge/core/error.hpp"

namespace patchforge {

inline constexpr const char* kManifestSchema = "patchforge/1";

struct PatchRecord {
  std::string id;
  std::string slide;  // corpus-relative path
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t size = 0;
  int label = 0;                // assigned (inherited from the slide)
  int variant = 1;              // 1 = un-augmented
  std::int64_t orig_index = 0;  // shared by all variants of one crop
  bool alive = true;
  std::optional<int> truth;  // synthetic corpora only

  bool mislabeled() const { return truth.has_value() && *truth != label; }
  bool operator==(const PatchRecord&) const = default;
};

/// Canonical id: original index then variant, so lexical order groups variants.
inline std::string patch_id(std::int64_t orig_index, int variant) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%08lldv%d", static_cast<long long>(orig_index), variant);
  return buf;
}

struct Manifest {
  std::vector<std::string> classes;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<PatchRecord> records;

  int class_count() const { return static_cast<int>(classes.size()); }

  std::size_t alive_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.alive; }));
  }

  std::vector<PatchRecord> alive_records() const {
    std::vector<PatchRecord> out;
    for (const auto& r : records)
      if (r.alive) out.push_back(r);
    return out;
  }

  void sort_by_id() {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }

  bool operator==(const Manifest&) const = default;
};

inline nlohmann::ordered_json record_to_json(const PatchRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["slide"] = r.slide;
  j["x"] = r.x;
  j["y"] = r.y;
  j["size"] = r.size;
  j["label"] = r.label;
  j["variant"] = r.variant;
  j["orig_index"] = r.orig_index;
  j["alive"] = r.alive;
  j["truth"] = r.truth ? nlohmann::ordered_json(*r.truth) : nlohmann::ordered_json(nullptr);
  return j;
}

namespace detail {

inline PatchRecord record_from_json(const nlohmann::json& j, std::size_t line) {
  static const std::set<std::string> kFields{"id", "slide", "x", "y", "size", "label", "variant", "orig_index", "alive", "truth"};
  if (!j.is_object()) throw ParseError("patch record must be a JSON object", line);
  for (const auto& [k, v] : j.items())
    if (!kFields.count(k)) throw ParseError("unexpected field '" + k + "'", line);
  for (const auto& k : kFields)
    if (!j.contains(k)) throw ParseError("missing field '" + k + "'", line);
  try {
    PatchRecord r;
    r.id = j.at("id").get<std::string>();
    r.slide = j.at("slide").get<std::string>();
    r.x = j.at("x").get<std::int64_t>();
    r.y = j.at("y").get<std::int64_t>();
    r.size = j.at("size").get<std::int64_t>();
    r.label = j.at("label").get<int>();
    r.variant = j.at("variant").get<int>();
    r.orig_index = j.at("orig_index").get<std::int64_t>();
    r.alive = j.at("alive").get<bool>();
    if (!j.at("truth").is_null()) r.truth = j.at("truth").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad field type: ") + e.what(), line);
  }
}

}  // namespace detail

/// Writes records sorted by id. Rejects duplicate ids.
inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::vector<const PatchRecord*> order;
  order.reserve(m.records.size());
  for (const auto& r : m.records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->id == order[i - 1]->id) throw ContractError("duplicate patch id " + order[i]->id);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  nlohmann::ordered_json header;
  header["schema"] = kManifestSchema;
  header["classes"] = m.classes;
  header["provenance"] = m.provenance;
  os << header.dump() << '\n';
  for (const auto* r : order) os << record_to_json(*r).dump() << '\n';
  if (!os) throw IoError("failed writing manifest " + path.string());
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (lineno == 1) {
      if (!j.is_object() || !j.contains("schema")) throw ParseError("missing manifest header", lineno);
      if (j["schema"] != kManifestSchema)
        throw ParseError("unsupported manifest schema " + j["schema"].dump() + " (expected \"" + kManifestSchema + "\")",
                         lineno);
      try {
        m.classes = j.at("classes").get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad classes: ") + e.what(), lineno);
      }
      m.provenance = j.value("provenance", nlohmann::json::object());
      continue;
    }
    auto r = detail::record_from_json(j, lineno);
    if (!ids.insert(r.id).second) throw ParseError("duplicate patch id " + r.id, lineno);
    if (r.label < 0 || r.label >= m.class_count() || (r.truth && (*r.truth < 0 || *r.truth >= m.class_count())))
      throw ParseError("label out of range for " + std::to_string(m.class_count()) + " classes", lineno);
    m.records.push_back(std::move(r));
  }
  if (lineno == 0) throw ParseError("empty manifest " + path.string(), 1);
  return m;
}

/// Checks that every referenced slide exists under `corpus_dir`.
inline void validate_slides(const Manifest& m, const std::filesystem::path& corpus_dir) {
  std::set<std::string> seen;
  for (const auto& r : m.records)
    if (seen.insert(r.slide).second && !std::filesystem::exists(corpus_dir / r.slide))
      throw IoError("slide " + r.slide + " not found under " + corpus_dir.string());
}

}  // namespace patchforge
