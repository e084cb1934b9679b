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

#include <vector>

#include "patchforge/core/tensor.hpp"

namespace patchforge {

enum class PoolMode { kMax, kAvg, kGlobalAvg };

struct PoolSpec {
  PoolMode mode = PoolMode::kMax;
  Dim window_h = 2, window_w = 2;
  Dim stride_h = 2, stride_w = 2;

  static PoolSpec max(Dim window, Dim stride) { return {PoolMode::kMax, window, window, stride, stride}; }
  static PoolSpec avg(Dim window, Dim stride) { return {PoolMode::kAvg, window, window, stride, stride}; }
  static PoolSpec global_avg() { return {PoolMode::kGlobalAvg, 1, 1, 1, 1}; }
};

/// Windowed max/mean over each channel plane (no padding), or a global mean
/// down to 1x1. Max ties route the gradient to the first index in row-major
/// window order.
template <class T>
Tensor<T> pool2d(const Tensor<T>& input, const PoolSpec& spec) {
  if (input.ndim() != 4) throw InvalidShape("pool2d expects NCHW, got " + to_string(input.shape()));
  const Dim N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t planes = static_cast<std::size_t>(N * C);
  const std::size_t in_plane = static_cast<std::size_t>(H * W);
  const auto x = input.data();
  auto xn = input.node();

  if (spec.mode == PoolMode::kGlobalAvg) {
    std::vector<T> out(planes);
    const T inv = T(1) / static_cast<T>(in_plane);
    for (std::size_t p = 0; p < planes; ++p) {
      T s = 0;
      for (std::size_t i = 0; i < in_plane; ++i) s += x[p * in_plane + i];
      out[p] = s * inv;
    }
    return detail::make_result<T>("global_avg_pool", Shape{N, C, 1, 1}, std::move(out), {&input},
                                  [xn, planes, in_plane, inv](detail::Node<T>& o) {
                                    if (!xn->requires_grad) return;
                                    auto& g = xn->grad_buffer();
                                    for (std::size_t p = 0; p < planes; ++p)
                                      for (std::size_t i = 0; i < in_plane; ++i)
                                        g[p * in_plane + i] += o.grad[p] * inv;
                                  });
  }

  const Dim kh = spec.window_h, kw = spec.window_w, sh = spec.stride_h, sw = spec.stride_w;
  if (kh < 1 || kw < 1 || sh < 1 || sw < 1) throw InvalidShape("pool2d: window and stride must be >= 1");
  if (kh > H || kw > W)
    throw InvalidShape("pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " does not fit input " + to_string(input.shape()));
  const Dim OH = (H - kh) / sh + 1, OW = (W - kw) / sw + 1;
  const std::size_t out_plane = static_cast<std::size_t>(OH * OW);
  std::vector<T> out(planes * out_plane);

  if (spec.mode == PoolMode::kMax) {
    std::vector<std::size_t> arg(out.size());
    for (std::size_t p = 0; p < planes; ++p)
      for (Dim oh = 0; oh < OH; ++oh)
        for (Dim ow = 0; ow < OW; ++ow) {
          std::size_t best = p * in_plane + (oh * sh) * W + ow * sw;
          for (Dim i = 0; i < kh; ++i)
            for (Dim j = 0; j < kw; ++j) {
              const std::size_t idx = p * in_plane + (oh * sh + i) * W + (ow * sw + j);
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = p * out_plane + oh * OW + ow;
          out[o] = x[best];
          arg[o] = best;
        }
    return detail::make_result<T>("max_pool", Shape{N, C, OH, OW}, std::move(out), {&input},
                                  [xn, arg = std::move(arg)](detail::Node<T>& o) {
                                    if (!xn->requires_grad) return;
                                    auto& g = xn->grad_buffer();
                                    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                                  });
  }

  const T inv = T(1) / static_cast<T>(kh * kw);
  for (std::size_t p = 0; p < planes; ++p)
    for (Dim oh = 0; oh < OH; ++oh)
      for (Dim ow = 0; ow < OW; ++ow) {
        T s = 0;
        for (Dim i = 0; i < kh; ++i)
          for (Dim j = 0; j < kw; ++j) s += x[p * in_plane + (oh * sh + i) * W + (ow * sw + j)];
        out[p * out_plane + oh * OW + ow] = s * inv;
      }
  return detail::make_result<T>(
      "avg_pool", Shape{N, C, OH, OW}, std::move(out), {&input},
      [xn, planes, in_plane, out_plane, OH, OW, W, kh, kw, sh, sw, inv](detail::Node<T>& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p)
          for (Dim oh = 0; oh < OH; ++oh)
            for (Dim ow = 0; ow < OW; ++ow) {
              const T go = o.grad[p * out_plane + oh * OW + ow] * inv;
              for (Dim i = 0; i < kh; ++i)
                for (Dim j = 0; j < kw; ++j) g[p * in_plane + (oh * sh + i) * W + (ow * sw + j)] += go;
            }
      });
}

}  // namespace patchforge
