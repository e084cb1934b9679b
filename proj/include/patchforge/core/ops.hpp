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

enum class Elementwise { kAdd, kSub, kMul };

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidShape(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
}

}  // namespace detail

template <class T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  switch (op) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
      break;
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result<T>("elementwise", a.shape(), std::move(out), {&a, &b},
                                [an, bn, op](detail::Node<T>& o) {
                                  const auto& g = o.grad;
                                  const std::size_t n = g.size();
                                  if (op == Elementwise::kMul) {
                                    if (an->requires_grad) {
                                      auto& ga = an->grad_buffer();
                                      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->value[i];
                                    }
                                    if (bn->requires_grad) {
                                      auto& gb = bn->grad_buffer();
                                      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->value[i];
                                    }
                                    return;
                                  }
                                  detail::accumulate<T>(*an, g);
                                  if (bn->requires_grad) {
                                    auto& gb = bn->grad_buffer();
                                    const T sign = op == Elementwise::kSub ? T(-1) : T(1);
                                    for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
                                  }
                                });
}

/// x + c elementwise.
template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += c;
  auto an = a.node();
  return detail::make_result<T>("add_scalar", a.shape(), std::move(out), {&a},
                                [an](detail::Node<T>& o) { detail::accumulate<T>(*an, o.grad); });
}

/// c * x elementwise.
template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return detail::make_result<T>("scale", a.shape(), std::move(out), {&a},
                                [an, c](detail::Node<T>& o) {
                                  if (!an->requires_grad) return;
                                  auto& g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
                                });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::kAdd, a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::kSub, a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::kMul, a, b);
}

/// Sum of all elements as a shape-(1) tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto an = a.node();
  return detail::make_result<T>("sum", Shape{1}, std::vector<T>{s}, {&a},
                                [an](detail::Node<T>& o) {
                                  if (!an->requires_grad) return;
                                  auto& g = an->grad_buffer();
                                  for (auto& v : g) v += o.grad[0];
                                });
}

/// max(x, 0); the derivative at exactly 0 is taken as 0.
template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return detail::make_result<T>("relu", a.shape(), std::move(out), {&a},
                                [an](detail::Node<T>& o) {
                                  if (!an->requires_grad) return;
                                  auto& g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    if (an->value[i] > T(0)) g[i] += o.grad[i];
                                });
}

/// Same elements, new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  check_shape(shape);
  if (element_count(shape) != a.numel())
    throw InvalidShape("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return detail::make_result<T>("reshape", shape, std::move(out), {&a},
                                [an](detail::Node<T>& o) { detail::accumulate<T>(*an, o.grad); });
}

/// (M x K) . (K x N). Each output element sums over k in ascending order, so a
/// row's result does not depend on how many rows are in the batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw InvalidShape("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = x[i * k + p];
      const T* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result<T>(
      "matmul", Shape{Dim(m), Dim(n)}, std::move(out), {&a, &b},
      [an, bn, m, k, n](detail::Node<T>& o) {
        const auto& g = o.grad;
        if (an->requires_grad) {  // dA = G . B^T
          auto& ga = an->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T s = 0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->value[p * n + j];
              ga[i * k + p] += s;
            }
        }
        if (bn->requires_grad) {  // dB = A^T . G
          auto& gb = bn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T s = an->value[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * g[i * n + j];
            }
        }
      });
}

/// Adds bias[j] to column j of an (N x F) matrix.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.ndim() != 2 || bias.numel() != static_cast<std::size_t>(x.dim(1)))
    throw InvalidShape("add_row_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bias[j];
  auto xn = x.node();
  auto bn = bias.node();
  return detail::make_result<T>("add_row_bias", x.shape(), std::move(out), {&x, &bias},
                                [xn, bn, rows, cols](detail::Node<T>& o) {
                                  detail::accumulate<T>(*xn, o.grad);
                                  if (!bn->requires_grad) return;
                                  auto& gb = bn->grad_buffer();
                                  for (std::size_t i = 0; i < rows; ++i)
                                    for (std::size_t j = 0; j < cols; ++j) gb[j] += o.grad[i * cols + j];
                                });
}

/// Fully connected layer: x (N x in) . w (in x out) + b.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

}  // namespace patchforge
