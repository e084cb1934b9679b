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

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "patchforge/data/image.hpp"

namespace patchforge {

inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::lround(std::min(255.0, y)));
}

inline Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = luma(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  return out;
}

using Histogram = std::array<std::uint64_t, 256>;

inline Histogram gray_histogram(const Image& gray) {
  Histogram h{};
  for (auto v : gray.pixels) ++h[v];
  return h;
}

/// Otsu threshold t: splits levels into [0, t] and [t+1, 255] maximizing the
/// between-class variance; the first maximum wins. Empty when only one gray
/// level is present.
inline std::optional<int> otsu_threshold(const Histogram& hist) {
  std::uint64_t total = 0;
  double sum_all = 0;
  int levels = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum_all += static_cast<double>(i) * static_cast<double>(hist[i]);
    levels += hist[i] > 0;
  }
  if (levels < 2) return std::nullopt;
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(hist[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
    const double w1 = static_cast<double>(total) - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

/// Single-channel mask, 255 = foreground (tissue, the darker side).
struct RoiMask {
  Image mask;
  int threshold = 255;
  bool degenerate = false;  // single intensity: everything is foreground
};

inline RoiMask binarize_roi(const Image& slide) {
  const Image gray = to_gray(slide);
  RoiMask out;
  out.mask = Image(gray.width, gray.height, 1);
  const auto t = otsu_threshold(gray_histogram(gray));
  if (!t) {
    out.degenerate = true;
    std::fill(out.mask.pixels.begin(), out.mask.pixels.end(), std::uint8_t{255});
    return out;
  }
  out.threshold = *t;
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) out.mask.pixels[i] = gray.pixels[i] <= *t ? 255 : 0;
  return out;
}

/// Summed-area table over mask pixels that are nonzero.
class IntegralMask {
 public:
  explicit IntegralMask(const Image& mask) : w_(mask.width), h_(mask.height), s_((w_ + 1) * (h_ + 1), 0) {
    if (mask.channels != 1) throw InvalidInput("integral mask needs a single-channel image");
    for (int y = 0; y < h_; ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < w_; ++x) {
        row += mask.at(x, y) != 0;
        s_[idx(x + 1, y + 1)] = s_[idx(x + 1, y)] + row;
      }
    }
  }

  std::int64_t count(int x, int y, int w, int h) const {
    return s_[idx(x + w, y + h)] - s_[idx(x, y + h)] - s_[idx(x + w, y)] + s_[idx(x, y)];
  }
  double fraction(int x, int y, int w, int h) const {
    return static_cast<double>(count(x, y, w, h)) / (static_cast<double>(w) * h);
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (w_ + 1) + x; }
  int w_, h_;
  std::vector<std::int64_t> s_;
};

}  // namespace patchforge
