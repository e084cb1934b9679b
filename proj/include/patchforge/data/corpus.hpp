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

// A corpus directory holds `corpus.json` plus the slide rasters it lists:
//   {"classes":[...], "provenance":{...},
//    "slides":[{"id","path","label","width","height","mask"}]}
// `mask` (nullable) is a P5 image whose nonzero pixels mark normal tissue;
// synthetic corpora use it to derive per-patch ground truth.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/core/rng.hpp"
#include "patchforge/data/manifest.hpp"
#include "patchforge/data/roi.hpp"

namespace patchforge {

inline constexpr const char* kCorpusIndexFile = "corpus.json";

struct SlideInfo {
  std::string id;
  std::string path;  // corpus-relative
  int label = 0;
  int width = 0;
  int height = 0;
  std::optional<std::string> mask;
};

struct CorpusIndex {
  std::vector<std::string> classes;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<SlideInfo> slides;
};

inline void write_corpus_index(const CorpusIndex& c, const std::filesystem::path& dir) {
  nlohmann::ordered_json j;
  j["classes"] = c.classes;
  j["provenance"] = c.provenance;
  j["slides"] = nlohmann::ordered_json::array();
  for (const auto& s : c.slides) {
    nlohmann::ordered_json e;
    e["id"] = s.id;
    e["path"] = s.path;
    e["label"] = s.label;
    e["width"] = s.width;
    e["height"] = s.height;
    e["mask"] = s.mask ? nlohmann::ordered_json(*s.mask) : nlohmann::ordered_json(nullptr);
    j["slides"].push_back(e);
  }
  std::ofstream os(dir / kCorpusIndexFile, std::ios::trunc);
  if (!os) throw IoError("cannot write corpus index in " + dir.string());
  os << j.dump(1) << '\n';
}

inline CorpusIndex read_corpus_index(const std::filesystem::path& dir) {
  std::ifstream is(dir / kCorpusIndexFile);
  if (!is) throw IoError("no " + std::string(kCorpusIndexFile) + " in " + dir.string());
  CorpusIndex c;
  try {
    const auto j = nlohmann::json::parse(is);
    c.classes = j.at("classes").get<std::vector<std::string>>();
    c.provenance = j.value("provenance", nlohmann::json::object());
    for (const auto& e : j.at("slides")) {
      SlideInfo s;
      s.id = e.at("id").get<std::string>();
      s.path = e.at("path").get<std::string>();
      s.label = e.at("label").get<int>();
      s.width = e.at("width").get<int>();
      s.height = e.at("height").get<int>();
      if (e.contains("mask") && !e["mask"].is_null()) s.mask = e["mask"].get<std::string>();
      if (s.label < 0 || s.label >= static_cast<int>(c.classes.size()))
        throw ParseError("slide " + s.id + " has label out of range");
      c.slides.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corpus index " + (dir / kCorpusIndexFile).string() + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Window placement.
// ---------------------------------------------------------------------------

struct Window {
  int x = 0;
  int y = 0;
  bool operator==(const Window&) const = default;
};

/// patch * (1 - overlap); must be a positive integer.
inline int grid_stride(int patch, double overlap) {
  if (patch < 1) throw InvalidInput("patch size must be >= 1");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidInput("overlap fraction must be in [0, 1)");
  const double s = patch * (1.0 - overlap);
  const double r = std::round(s);
  if (r < 1 || std::abs(s - r) > 1e-9)
    throw InvalidInput("stride patch*(1-overlap) = " + std::to_string(s) + " is not a positive integer");
  return static_cast<int>(r);
}

/// Positions 0, s, 2s, ... with pos + patch <= extent.
inline std::vector<int> axis_positions(int extent, int patch, int stride) {
  if (patch > extent)
    throw InvalidInput("patch " + std::to_string(patch) + " larger than slide extent " + std::to_string(extent));
  std::vector<int> out;
  for (int p = 0; p + patch <= extent; p += stride) out.push_back(p);
  return out;
}

/// Row-major grid of window origins.
inline std::vector<Window> grid_windows(int width, int height, int patch, double overlap) {
  const int s = grid_stride(patch, overlap);
  const auto xs = axis_positions(width, patch, s);
  const auto ys = axis_positions(height, patch, s);
  std::vector<Window> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) out.push_back({x, y});
  return out;
}

inline std::vector<Window> filter_foreground(const std::vector<Window>& windows, const IntegralMask& fg, int patch,
                                             double min_fraction) {
  std::vector<Window> out;
  for (const auto& w : windows)
    if (fg.fraction(w.x, w.y, patch, patch) >= min_fraction) out.push_back(w);
  return out;
}

/// `count` distinct origins drawn uniformly from the valid range. With a
/// foreground mask, only windows reaching `min_fraction` are accepted; gives
/// up after a bounded number of draws and returns what it found.
inline std::vector<Window> random_windows(int width, int height, int patch, int count, Rng& rng,
                                          const IntegralMask* fg = nullptr, double min_fraction = 0.5) {
  if (patch > width || patch > height) throw InvalidInput("patch larger than slide");
  std::vector<Window> out;
  std::set<std::pair<int, int>> seen;
  const std::uint64_t nx = static_cast<std::uint64_t>(width - patch + 1);
  const std::uint64_t ny = static_cast<std::uint64_t>(height - patch + 1);
  const std::uint64_t max_draws = 50ull * static_cast<std::uint64_t>(std::max(count, 1));
  for (std::uint64_t d = 0; d < max_draws && static_cast<int>(out.size()) < count; ++d) {
    const Window w{static_cast<int>(rng.below(nx)), static_cast<int>(rng.below(ny))};
    if (fg != nullptr && fg->fraction(w.x, w.y, patch, patch) < min_fraction) continue;
    if (seen.insert({w.x, w.y}).second) out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus cropping.
// ---------------------------------------------------------------------------

enum class CropMode { kGrid, kRandom };

struct CropOptions {
  int patch = 512;
  double overlap = 0.5;
  CropMode mode = CropMode::kGrid;
  bool roi = false;                  // restrict to Otsu foreground
  double min_foreground = 0.5;       // fraction of the window
  int random_per_slide = 0;          // kRandom only
  std::uint64_t seed = 0;            // kRandom only
  double truth_normal_fraction = 0.5;
};

/// Ground truth for a window of a slide with a normal-region mask: class 0
/// when at least `normal_fraction` of its pixels are normal, else `label`.
inline int window_truth(const IntegralMask& normal, const Window& w, int patch, int label, double normal_fraction = 0.5) {
  return normal.fraction(w.x, w.y, patch, patch) >= normal_fraction ? 0 : label;
}

/// Variant-1 records for the given windows; orig indices continue from
/// `next_index`.
inline std::vector<PatchRecord> make_records(const SlideInfo& slide, const std::vector<Window>& windows, int patch,
                                             std::int64_t& next_index) {
  std::vector<PatchRecord> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    PatchRecord r;
    r.orig_index = next_index++;
    r.id = patch_id(r.orig_index, 1);
    r.slide = slide.path;
    r.x = w.x;
    r.y = w.y;
    r.size = patch;
    r.label = slide.label;
    r.variant = 1;
    out.push_back(std::move(r));
  }
  return out;
}

/// Grid crop of a single slide (no RoI restriction).
inline std::vector<PatchRecord> crop_patches(const SlideInfo& slide, int patch, double overlap,
                                             std::int64_t first_index = 0) {
  return make_records(slide, grid_windows(slide.width, slide.height, patch, overlap), patch, first_index);
}

/// Crops every slide of a corpus. Synthetic corpora (slides with masks or a
/// "synthetic" provenance) get ground truth on each record.
inline Manifest crop_corpus(const CorpusIndex& corpus, const std::filesystem::path& dir, const CropOptions& opt) {
  Manifest m;
  m.classes = corpus.classes;
  m.provenance = corpus.provenance;
  m.provenance["crop"] = {{"patch", opt.patch},
                          {"overlap", opt.overlap},
                          {"mode", opt.mode == CropMode::kGrid ? "grid" : "random"},
                          {"roi", opt.roi},
                          {"min_foreground", opt.min_foreground}};
  if (opt.mode == CropMode::kRandom) {
    m.provenance["crop"]["per_slide"] = opt.random_per_slide;
    m.provenance["crop"]["seed"] = opt.seed;
  }
  const bool synthetic = corpus.provenance.value("kind", "") == "synthetic";
  std::int64_t next = 0;
  for (std::size_t si = 0; si < corpus.slides.size(); ++si) {
    const auto& slide = corpus.slides[si];
    std::optional<IntegralMask> fg;
    if (opt.roi) fg.emplace(binarize_roi(read_pnm(dir / slide.path)).mask);
    std::vector<Window> windows;
    if (opt.mode == CropMode::kGrid) {
      windows = grid_windows(slide.width, slide.height, opt.patch, opt.overlap);
      if (fg) windows = filter_foreground(windows, *fg, opt.patch, opt.min_foreground);
    } else {
      Rng rng(mix_seed(opt.seed, si));
      windows = random_windows(slide.width, slide.height, opt.patch, opt.random_per_slide, rng,
                               fg ? &*fg : nullptr, opt.min_foreground);
    }
    auto records = make_records(slide, windows, opt.patch, next);
    if (slide.mask) {
      const IntegralMask normal(read_pnm(dir / *slide.mask));
      for (std::size_t k = 0; k < records.size(); ++k)
        records[k].truth = window_truth(normal, windows[k], opt.patch, slide.label, opt.truth_normal_fraction);
    } else if (synthetic) {
      for (auto& r : records) r.truth = slide.label;
    }
    for (auto& r : records) m.records.push_back(std::move(r));
  }
  m.sort_by_id();
  return m;
}

}  // namespace patchforge
