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

// Synthetic noisy-label corpus. Class 0 is "normal". Every class has its own
// oriented grating (angle, period, tint) plus per-pixel Gaussian noise.
// Slides of the other classes receive seeded random ellipses of normal
// texture until at least a fraction rho of the slide is covered; patches
// cropped from them still inherit the slide label, so the ones that are
// mostly normal are mislabeled by construction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "patchforge/core/rng.hpp"
#include "patchforge/data/corpus.hpp"
#include "patchforge/data/image.hpp"

namespace patchforge {

struct SynthConfig {
  int classes = 4;
  int slides_per_class = 8;
  int width = 1024;
  int height = 768;
  int patch = 128;        // sets ellipse scale and the truth manifest crop
  double overlap = 0.5;   // truth manifest crop
  double rho = 0.25;      // target normal-region fraction in non-normal slides
  std::uint64_t seed = 11;
  double noise_sd = 20.0;
  double amplitude = 45.0;
  double ellipse_min = 0.75;  // semi-axis range, in patch sizes
  double ellipse_max = 1.5;

  void validate() const {
    if (classes < 2) throw InvalidInput("synthetic corpus needs at least 2 classes");
    if (slides_per_class < 1 || width < 1 || height < 1 || patch < 1) throw InvalidInput("synthetic corpus sizes must be >= 1");
    if (!(rho >= 0.0 && rho < 1.0)) throw InvalidInput("rho must be in [0, 1)");
    if (patch > width || patch > height) throw InvalidInput("patch larger than slide");
  }
};

inline std::vector<std::string> default_class_names(int k) {
  if (k == 4) return {"normal", "benign", "in_situ", "invasive"};
  std::vector<std::string> out{"normal"};
  for (int c = 1; c < k; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

struct GratingTexture {
  double angle = 0;
  double period = 10;
  double tint[3] = {0, 0, 0};
};

inline GratingTexture class_texture(int c, int k) {
  GratingTexture t;
  const double u = static_cast<double>(c) / k;
  t.angle = std::numbers::pi * u + 0.2;
  t.period = 7.0 + 5.0 * c;
  const double h = 2.0 * std::numbers::pi * u;
  t.tint[0] = 165 + 35 * std::cos(h);
  t.tint[1] = 125 + 30 * std::sin(h);
  t.tint[2] = 170 - 25 * std::cos(h + 1.0);
  return t;
}

/// Rasterizes filled ellipses into `mask` (1 channel, 255 = normal) until the
/// covered fraction reaches `rho`. Returns the achieved fraction.
inline double plant_normal_regions(Image& mask, double rho, double min_axis, double max_axis, Rng& rng) {
  const int w = mask.width, h = mask.height;
  const double total = static_cast<double>(w) * h;
  std::int64_t covered = 0;
  for (auto v : mask.pixels) covered += v != 0;
  for (int guard = 0; covered < rho * total && guard < 100000; ++guard) {
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double a = rng.uniform(min_axis, max_axis), b = rng.uniform(min_axis, max_axis);
    const double th = rng.uniform(0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    const double reach = std::max(a, b);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        if (u * u + v * v <= 1.0 && mask.at(x, y) == 0) {
          mask.at(x, y) = 255;
          ++covered;
        }
      }
  }
  return static_cast<double>(covered) / total;
}

/// Paints class texture everywhere and normal texture where `normal` is set.
inline Image render_slide(const SynthConfig& cfg, int label, const Image* normal, Rng& rng) {
  Image img(cfg.width, cfg.height, 3);
  const GratingTexture tex[2] = {class_texture(0, cfg.classes), class_texture(label, cfg.classes)};
  double phase[2], brightness[2];
  for (int i = 0; i < 2; ++i) {
    phase[i] = rng.uniform(0, 2 * std::numbers::pi);
    brightness[i] = rng.uniform(-8, 8);
  }
  double dir[2][2], k[2];
  for (int i = 0; i < 2; ++i) {
    dir[i][0] = std::cos(tex[i].angle);
    dir[i][1] = std::sin(tex[i].angle);
    k[i] = 2 * std::numbers::pi / tex[i].period;
  }
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const int t = (label == 0 || (normal != nullptr && normal->at(x, y) != 0)) ? 0 : 1;
      const double wave = cfg.amplitude * std::sin(k[t] * (x * dir[t][0] + y * dir[t][1]) + phase[t]);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = tex[t].tint[ch] + brightness[t] + wave + rng.normal(0.0, cfg.noise_sd);
        img.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return img;
}

struct SynthCorpus {
  CorpusIndex index;
  Manifest truth;                      // grid crop, variant 1, with ground truth
  std::vector<double> normal_coverage;  // per slide
};

/// Writes slides/, masks/ and corpus.json under `dir`.
inline SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "slides");
  fs::create_directories(dir / "masks");
  SynthCorpus out;
  out.index.classes = default_class_names(cfg.classes);
  out.index.provenance = {{"kind", "synthetic"},
                          {"seed", cfg.seed},
                          {"rho", cfg.rho},
                          {"classes", cfg.classes},
                          {"slides_per_class", cfg.slides_per_class},
                          {"width", cfg.width},
                          {"height", cfg.height},
                          {"patch", cfg.patch}};
  std::uint64_t slide_no = 0;
  for (int label = 0; label < cfg.classes; ++label)
    for (int s = 0; s < cfg.slides_per_class; ++s, ++slide_no) {
      Rng rng(mix_seed(cfg.seed, slide_no));
      char id[32];
      std::snprintf(id, sizeof(id), "c%d_s%03d", label, s);
      SlideInfo info;
      info.id = id;
      info.path = "slides/" + info.id + ".ppm";
      info.label = label;
      info.width = cfg.width;
      info.height = cfg.height;
      Image mask;
      double coverage = 1.0;
      if (label != 0) {
        mask = Image(cfg.width, cfg.height, 1);
        coverage = plant_normal_regions(mask, cfg.rho, cfg.ellipse_min * cfg.patch, cfg.ellipse_max * cfg.patch, rng);
        info.mask = "masks/" + info.id + ".pgm";
        write_pnm(mask, dir / *info.mask);
      }
      write_pnm(render_slide(cfg, label, label != 0 ? &mask : nullptr, rng), dir / info.path);
      out.normal_coverage.push_back(coverage);
      out.index.slides.push_back(std::move(info));
    }
  write_corpus_index(out.index, dir);
  CropOptions crop;
  crop.patch = cfg.patch;
  crop.overlap = cfg.overlap;
  out.truth = crop_corpus(out.index, dir, crop);
  return out;
}

}  // namespace patchforge
