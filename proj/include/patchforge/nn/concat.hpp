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

#include <algorithm>
#include <span>
#include <vector>

#include "patchforge/core/tensor.hpp"

namespace patchforge {

/// Stacks NCHW tensors along the channel axis, preserving order.
template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw InvalidShape("concat_channels: no inputs");
  const auto& first = inputs.front();
  if (first.ndim() != 4) throw InvalidShape("concat_channels expects NCHW inputs");
  const Dim N = first.dim(0), H = first.dim(2), W = first.dim(3);
  Dim C = 0;
  for (const auto& t : inputs) {
    if (t.ndim() != 4 || t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      throw InvalidShape("concat_channels: " + to_string(t.shape()) + " vs " + to_string(first.shape()));
    C += t.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(H * W);
  std::vector<T> out(static_cast<std::size_t>(N * C) * plane);
  std::vector<std::size_t> widths;
  std::vector<detail::NodePtr<T>> nodes;
  for (const auto& t : inputs) {
    widths.push_back(static_cast<std::size_t>(t.dim(1)) * plane);
    nodes.push_back(t.node());
  }
  const std::size_t row = static_cast<std::size_t>(C) * plane;
  for (std::size_t n = 0; n < static_cast<std::size_t>(N); ++n) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const T* src = inputs[k].data().data() + n * widths[k];
      std::copy(src, src + widths[k], out.data() + n * row + offset);
      offset += widths[k];
    }
  }

  return detail::make_result<T>(
      "concat_channels", Shape{N, C, H, W}, std::move(out), nodes,
      [nodes, widths, row, N](detail::Node<T>& o) {
        for (std::size_t n = 0; n < static_cast<std::size_t>(N); ++n) {
          std::size_t offset = 0;
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k]->requires_grad) {
              T* dst = nodes[k]->grad_buffer().data() + n * widths[k];
              const T* src = o.grad.data() + n * row + offset;
              for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
            }
            offset += widths[k];
          }
        }
      });
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  return concat_channels(std::span<const Tensor<T>>(inputs));
}

/// Channels [begin, begin + count) of an NCHW tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& input, Dim begin, Dim count) {
  if (input.ndim() != 4 || begin < 0 || count < 1 || begin + count > input.dim(1))
    throw InvalidShape("slice_channels out of range for " + to_string(input.shape()));
  const Dim N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H * W);
  const std::size_t width = static_cast<std::size_t>(count) * plane;
  const std::size_t row = static_cast<std::size_t>(C) * plane;
  const std::size_t offset = static_cast<std::size_t>(begin) * plane;
  std::vector<T> out(static_cast<std::size_t>(N) * width);
  for (std::size_t n = 0; n < static_cast<std::size_t>(N); ++n) {
    const T* src = input.data().data() + n * row + offset;
    std::copy(src, src + width, out.data() + n * width);
  }
  auto xn = input.node();
  return detail::make_result<T>("slice_channels", Shape{N, count, H, W}, std::move(out), {&input},
                                [xn, N, width, row, offset](detail::Node<T>& o) {
                                  if (!xn->requires_grad) return;
                                  auto& g = xn->grad_buffer();
                                  for (std::size_t n = 0; n < static_cast<std::size_t>(N); ++n)
                                    for (std::size_t i = 0; i < width; ++i)
                                      g[n * row + offset + i] += o.grad[n * width + i];
                                });
}

}  // namespace patchforge
