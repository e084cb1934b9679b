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

#include <string>
#include <utility>
#include <vector>

#include "patchforge/data/image.hpp"
#include "patchforge/data/manifest.hpp"

namespace patchforge {

/// rot_mirror_8: (id, r90, r180, r270, flip, flip.r90, flip.r180, flip.r270)
/// where r90 is a quarter turn counter-clockwise and flip reflects top to
/// bottom, applied after the rotation. rot_4 is the first four.
enum class AugmentScheme { kRotMirror8, kRot4 };

inline int variant_count(AugmentScheme s) { return s == AugmentScheme::kRotMirror8 ? 8 : 4; }

inline AugmentScheme parse_augment_scheme(const std::string& name) {
  if (name == "rot_mirror_8") return AugmentScheme::kRotMirror8;
  if (name == "rot_4") return AugmentScheme::kRot4;
  throw InvalidInput("unknown augmentation scheme '" + name + "' (rot_mirror_8 | rot_4)");
}

/// Source (row, col) that variant j (1-based) copies into output (row, col)
/// of a side x side patch.
inline std::pair<int, int> variant_source(int j, int side, int row, int col) {
  if (j < 1 || j > 8) throw InvalidInput("variant index must be in [1, 8], got " + std::to_string(j));
  if (j >= 5) row = side - 1 - row;
  for (int k = 0; k < (j - 1) % 4; ++k) {
    const int r = col, c = side - 1 - row;
    row = r;
    col = c;
  }
  return {row, col};
}

inline Image apply_variant(const Image& patch, int j) {
  if (patch.width != patch.height)
    throw InvalidInput("augmentation needs a square patch, got " + std::to_string(patch.width) + "x" +
                       std::to_string(patch.height));
  if (j == 1) return patch;
  const int s = patch.width;
  Image out(s, s, patch.channels);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const auto [sr, sc] = variant_source(j, s, r, c);
      for (int ch = 0; ch < patch.channels; ++ch) out.at(c, r, ch) = patch.at(sc, sr, ch);
    }
  return out;
}

inline std::vector<Image> augment_patch(const Image& patch, AugmentScheme scheme) {
  if (patch.width != patch.height) throw InvalidInput("augmentation needs a square patch");
  std::vector<Image> out;
  for (int j = 1; j <= variant_count(scheme); ++j) out.push_back(apply_variant(patch, j));
  return out;
}

/// Expands every original (variant 1) record into its variants. Variants
/// inherit slide, origin, labels and alive flag.
inline Manifest augment_manifest(const Manifest& in, AugmentScheme scheme) {
  Manifest out;
  out.classes = in.classes;
  out.provenance = in.provenance;
  out.provenance["augmentation"] = scheme == AugmentScheme::kRotMirror8 ? "rot_mirror_8" : "rot_4";
  for (const auto& r : in.records) {
    if (r.variant != 1) throw ContractError("manifest is already augmented (record " + r.id + ")");
    for (int j = 1; j <= variant_count(scheme); ++j) {
      PatchRecord v = r;
      v.variant = j;
      v.id = patch_id(r.orig_index, j);
      out.records.push_back(std::move(v));
    }
  }
  out.sort_by_id();
  return out;
}

}  // namespace patchforge
