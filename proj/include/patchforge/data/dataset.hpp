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

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "patchforge/core/tensor.hpp"
#include "patchforge/data/augment.hpp"
#include "patchforge/data/image.hpp"
#include "patchforge/data/manifest.hpp"

namespace patchforge {

/// Which label a record contributes: the inherited slide label or the
/// synthetic ground truth.
enum class LabelSource { kAssigned, kTruth };

inline int record_label(const PatchRecord& r, LabelSource src) {
  if (src == LabelSource::kAssigned) return r.label;
  if (!r.truth) throw ContractError("record " + r.id + " has no ground-truth label");
  return *r.truth;
}

/// Loads slides on first use and keeps them. Thread-safe.
class SlideCache {
 public:
  explicit SlideCache(std::filesystem::path corpus_dir) : dir_(std::move(corpus_dir)) {}

  const Image& get(const std::string& rel) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(rel);
    if (it == cache_.end()) {
      auto img = std::make_unique<Image>(read_pnm(dir_ / rel));
      if (img->channels != 3) throw InvalidInput("slide " + rel + " is not RGB");
      it = cache_.emplace(rel, std::move(img)).first;
    }
    return *it->second;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Image>> cache_;
};

/// Pixels of one record (cropped, then its variant transform applied).
inline Image record_pixels(SlideCache& slides, const PatchRecord& r) {
  const Image& slide = slides.get(r.slide);
  return apply_variant(crop_image(slide, static_cast<int>(r.x), static_cast<int>(r.y), static_cast<int>(r.size)),
                       r.variant);
}

/// N x 3 x S x S batch with values pixel / 255. All records share one size.
template <class T = float>
Tensor<T> load_batch(SlideCache& slides, std::span<const PatchRecord> records) {
  if (records.empty()) throw InvalidInput("empty batch");
  const std::int64_t s = records.front().size;
  const std::size_t plane = static_cast<std::size_t>(s * s);
  std::vector<T> values(records.size() * 3 * plane);
  for (std::size_t n = 0; n < records.size(); ++n) {
    if (records[n].size != s) throw InvalidInput("mixed patch sizes in one batch");
    const Image img = record_pixels(slides, records[n]);
    T* base = values.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (int ch = 0; ch < 3; ++ch) base[ch * plane + p] = static_cast<T>(img.pixels[p * 3 + ch]) / T(255);
  }
  return Tensor<T>({static_cast<Dim>(records.size()), 3, s, s}, std::move(values));
}

/// A fixed, labeled patch set over cached slides. Pixels are cropped on
/// demand, so only the slides stay resident.
template <class T = float>
class PatchSet {
 public:
  PatchSet() = default;

  PatchSet(std::shared_ptr<SlideCache> slides, std::vector<PatchRecord> records, LabelSource labels)
      : slides_(std::move(slides)), records_(std::move(records)) {
    for (const auto& r : records_) {
      if (r.size != records_.front().size) throw InvalidInput("patch set mixes patch sizes");
      labels_.push_back(record_label(r, labels));
    }
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::int64_t patch_size() const { return records_.empty() ? 0 : records_.front().size; }
  const std::vector<PatchRecord>& records() const { return records_; }
  const std::vector<int>& labels() const { return labels_; }

  /// Stacks the given rows into an N x 3 x S x S tensor.
  Tensor<T> batch(std::span<const std::size_t> rows) const {
    std::vector<PatchRecord> picked;
    picked.reserve(rows.size());
    for (auto r : rows) picked.push_back(records_.at(r));
    return load_batch<T>(*slides_, picked);
  }

  std::vector<int> batch_labels(std::span<const std::size_t> rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(labels_.at(r));
    return out;
  }

 private:
  std::shared_ptr<SlideCache> slides_;
  std::vector<PatchRecord> records_;
  std::vector<int> labels_;
};

}  // namespace patchforge
