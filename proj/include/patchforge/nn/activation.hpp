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

#include <Eigen/Core>
#include <vector>

#include "patchforge/core/reduce.hpp"
#include "patchforge/core/tensor.hpp"

namespace patchforge {

inline constexpr double kPReluInitSlope = 0.25;

template <class T>
struct PReLUState {
  Tensor<T> slope;  // one learnable slope per channel

  static PReLUState make(Dim channels, double init = kPReluInitSlope) {
    return {Tensor<T>::create({channels}, Fill::constant(init))};
  }
};

/// y = x for x >= 0, a_c * x otherwise, with channel c = dim 1. Works on
/// NCHW and N x C inputs.
// At x == 0 the input derivative is a_c (so it is 0 when a_c = 0, matching
// ReLU), and the slope derivative x is 0.
template <class T>
Tensor<T> prelu(const Tensor<T>& input, const PReLUState<T>& state) {
  if (input.ndim() < 2) throw InvalidShape("prelu expects at least 2 dims");
  const std::size_t N = input.dim(0), C = input.dim(1);
  if (state.slope.numel() != C)
    throw InvalidShape("prelu: " + std::to_string(C) + " channels, " +
                       std::to_string(state.slope.numel()) + " slopes");
  const std::size_t inner = input.numel() / (N * C);
  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Vec>;
  using MMap = Eigen::Map<Vec>;
  const T* x = input.data().data();
  const T* a = state.slope.data().data();
  std::vector<T> out(input.numel());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * inner;
      const CMap v(x + base, static_cast<Eigen::Index>(inner));
      // Exactly v for v > 0 and a*v otherwise.
      MMap(out.data() + base, static_cast<Eigen::Index>(inner)) = v.max(T(0)) + a[c] * v.min(T(0));
    }
  auto xn = input.node();
  auto an = state.slope.node();
  return detail::make_result<T>(
      "prelu", input.shape(), std::move(out), {&input, &state.slope}, [xn, an, N, C, inner](detail::Node<T>& o) {
        const auto len = static_cast<Eigen::Index>(inner);
        T* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        T* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            const CMap g(o.grad.data() + base, len);
            const CMap v(xn->value.data() + base, len);
            if (gx != nullptr) MMap(gx + base, len) += (v > T(0)).select(g, an->value[c] * g);
            if (ga != nullptr) {
              const T* vp = xn->value.data() + base;
              const T* gp = o.grad.data() + base;
              ga[c] += static_cast<T>(lane_sum(inner, [vp, gp](std::size_t i) {
                return vp[i] < T(0) ? static_cast<double>(vp[i]) * gp[i] : 0.0;
              }));
            }
          }
      });
}

}  // namespace patchforge
