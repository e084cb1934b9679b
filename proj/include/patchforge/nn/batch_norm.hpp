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

#include <cmath>
#include <Eigen/Core>
#include <vector>

#include "patchforge/core/reduce.hpp"
#include "patchforge/core/tensor.hpp"

namespace patchforge {

enum class Mode { kTrain, kEval };

/// Per-channel batch normalization parameters and running statistics.
/// Running variance is tracked unbiased; normalization uses the biased
/// batch variance.
template <class T>
struct BatchNormState {
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::kTrain;

  static BatchNormState make(Dim channels, double momentum = 0.1, double epsilon = 1e-5) {
    BatchNormState s;
    s.scale = Tensor<T>::create({channels}, Fill::constant(1.0));
    s.shift = Tensor<T>::create({channels}, Fill::constant(0.0));
    s.running_mean = Tensor<T>::create({channels}, Fill::constant(0.0));
    s.running_var = Tensor<T>::create({channels}, Fill::constant(1.0));
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
  }

  Dim channels() const { return scale.dim(0); }
};

/// Normalizes an NCHW (or N x C) input per channel. Train mode uses batch
/// statistics and updates the running estimates in `state`; eval mode is a
/// fixed per-element affine map built from the running estimates.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state) {
  if (input.ndim() != 4 && input.ndim() != 2)
    throw InvalidShape("batch_norm expects NCHW or NxC, got " + to_string(input.shape()));
  const Dim C = input.dim(1);
  if (C != state.channels())
    throw InvalidShape("batch_norm: input has " + std::to_string(C) + " channels, state has " +
                       std::to_string(state.channels()));
  const std::size_t N = input.dim(0);
  const std::size_t inner = input.ndim() == 4 ? static_cast<std::size_t>(input.dim(2) * input.dim(3)) : 1;
  const std::size_t count = N * inner;
  const std::size_t Cs = static_cast<std::size_t>(C);
  const T* x = input.data().data();
  const T* gamma = state.scale.data().data();
  const T* beta = state.shift.data().data();

  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Vec>;
  using MMap = Eigen::Map<Vec>;
  const auto len = static_cast<Eigen::Index>(inner);
  auto plane = [len](const T* p) { return CMap(p, len); };

  std::vector<T> mean(Cs), inv_std(Cs);
  if (state.mode == Mode::kTrain) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < Cs; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n) s += lane_sum(x + (n * Cs + c) * inner, inner);
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < N; ++n)
        ss += lane_sum(inner, [p = x + (n * Cs + c) * inner, mu](std::size_t i) {
          const double d = static_cast<double>(p[i]) - mu;
          return d * d;
        });
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      rm[c] = static_cast<T>((1.0 - state.momentum) * rm[c] + state.momentum * mu);
      rv[c] = static_cast<T>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < Cs; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + state.epsilon));
    }
  }

  const bool batch_stats = state.mode == Mode::kTrain;
  std::vector<T> out(input.numel());
  // xhat is only needed for gradients.
  const bool keep_xhat = GradTape<T>::active() != nullptr;
  std::vector<T> xhat(keep_xhat ? out.size() : 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < Cs; ++c) {
      const std::size_t base = (n * Cs + c) * inner;
      const T mc = mean[c], sc = inv_std[c], gc = gamma[c], bc = beta[c];
      MMap y(out.data() + base, len);
      if (keep_xhat) {
        MMap h(xhat.data() + base, len);
        h = (plane(x + base) - mc) * sc;
        y = gc * h + bc;
      } else {
        y = gc * ((plane(x + base) - mc) * sc) + bc;
      }
    }

  auto xn = input.node();
  auto gn = state.scale.node();
  auto bn = state.shift.node();
  return detail::make_result<T>(
      "batch_norm", input.shape(), std::move(out), {&input, &state.scale, &state.shift},
      [xn, gn, bn, xhat = std::move(xhat), inv_std, N, Cs, inner, count,
       batch_stats](detail::Node<T>& o) {
        using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
        using CMap = Eigen::Map<const Vec>;
        using MMap = Eigen::Map<Vec>;
        const auto len = static_cast<Eigen::Index>(inner);
        T* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        for (std::size_t c = 0; c < Cs; ++c) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * Cs + c) * inner;
            const T* g = o.grad.data() + base;
            const T* h = xhat.data() + base;
            sum_g += lane_sum(g, inner);
            sum_gx += lane_sum(inner, [g, h](std::size_t i) { return static_cast<double>(g[i]) * h[i]; });
          }
          const T sg = static_cast<T>(sum_g), sgx = static_cast<T>(sum_gx);
          if (gn->requires_grad) gn->grad_buffer()[c] += sgx;
          if (bn->requires_grad) bn->grad_buffer()[c] += sg;
          if (gx == nullptr) continue;
          const T gamma_c = gn->value[c];
          if (batch_stats) {
            const T m = static_cast<T>(count);
            const T k = gamma_c * inv_std[c] / m;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * Cs + c) * inner;
              const CMap g(o.grad.data() + base, len), h(xhat.data() + base, len);
              MMap(gx + base, len) += k * (m * g - sg - h * sgx);
            }
          } else {
            const T k = gamma_c * inv_std[c];
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * Cs + c) * inner;
              MMap(gx + base, len) += k * CMap(o.grad.data() + base, len);
            }
          }
        }
      });
}

}  // namespace patchforge
