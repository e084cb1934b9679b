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

// Checkpoint layout:
//
//   "ADNCKPT1"
//   one line of compact UTF-8 JSON terminated by '\n':
//     {"version":1, "architecture":{...}, "blob_bytes":N, "checksum":"<16 hex>",
//      "tensors":[{"name":..., "shape":[...], "dtype":"f32", "offset":...}, ...]}
//   N bytes of little-endian float32 tensor data in directory order.
//
// The checksum is 64-bit FNV-1a over the blob section.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "patchforge/model/zoo.hpp"

namespace patchforge {

inline constexpr char kCheckpointMagic[] = "ADNCKPT1";
inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline void put_f32_le(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// Serializes architecture and every persisted tensor (running statistics
/// included) to `path`.
template <class T>
void save_checkpoint(const ModelGraph<T>& model, const std::filesystem::path& path) {
  std::vector<std::uint8_t> blob;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& p : model.state()) {
    dir.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"dtype", "f32"}, {"offset", blob.size()}});
    for (T v : p.tensor->data()) detail::put_f32_le(blob, static_cast<float>(v));
  }
  nlohmann::json header = {{"version", kCheckpointVersion},
                           {"architecture", model.architecture()},
                           {"tensors", dir},
                           {"blob_bytes", blob.size()},
                           {"checksum", detail::hex64(fnv1a64(blob.data(), blob.size()))}};
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 8);
  const std::string h = header.dump();
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.put('\n');
  os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

/// Rebuilds the model described by the checkpoint and restores its tensors.
/// The returned model is in eval mode.
template <class T>
ModelGraph<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IntegrityError("not a checkpoint (bad magic): " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IntegrityError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("version", -1) != kCheckpointVersion)
    throw ContractError("checkpoint version " + header.value("version", nlohmann::json(-1)).dump() +
                        " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");

  const std::size_t blob_bytes = header.at("blob_bytes").get<std::size_t>();
  std::vector<std::uint8_t> blob(blob_bytes);
  is.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_bytes));
  if (static_cast<std::size_t>(is.gcount()) != blob_bytes)
    throw IntegrityError("truncated checkpoint blob: expected " + std::to_string(blob_bytes) + " bytes, got " +
                         std::to_string(is.gcount()));
  if (is.peek() != std::char_traits<char>::eof()) throw IntegrityError("trailing bytes after checkpoint blob");
  if (detail::hex64(fnv1a64(blob.data(), blob.size())) != header.at("checksum").get<std::string>())
    throw IntegrityError("checkpoint checksum mismatch: " + path.string());

  auto model = build_model<T>(header.at("architecture"));
  std::map<std::string, ParamRef<T>> by_name;
  for (auto& p : model.state()) by_name.emplace(p.name, p);
  std::size_t restored = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("checkpoint tensor '" + name + "' is unknown to the architecture");
    if (entry.value("dtype", "") != "f32") throw ContractError("unsupported dtype for " + name);
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != it->second.tensor->shape())
      throw ContractError("checkpoint tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                          to_string(it->second.tensor->shape()));
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    auto dst = it->second.tensor->mutable_data();
    if (offset + 4 * dst.size() > blob.size()) throw IntegrityError("tensor '" + name + "' runs past the blob");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(detail::get_f32_le(blob.data() + offset + 4 * i));
    ++restored;
  }
  if (restored != by_name.size())
    throw ContractError("checkpoint is missing " + std::to_string(by_name.size() - restored) + " tensors");
  model.set_mode(Mode::kEval);
  return model;
}

}  // namespace patchforge
