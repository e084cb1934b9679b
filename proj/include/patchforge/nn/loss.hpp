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
#include <span>
#include <vector>

#include "patchforge/core/tensor.hpp"

namespace patchforge {

template <class T>
struct LossReport {
  Tensor<T> loss;                  // scalar mean loss, on the tape when logits are
  std::vector<double> per_sample;  // -log softmax(f_i)[y_i]
  std::vector<double> probs;       // N x K softmax, row-major
  std::size_t batch = 0;
  std::size_t classes = 0;
};

/// Row-wise softmax of an N x K logit matrix, max-subtracted, in double.
inline std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows,
                                        std::size_t cols) {
  std::vector<double> p(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* f = logits.data() + i * cols;
    double m = f[0];
    for (std::size_t k = 1; k < cols; ++k) m = std::max(m, f[k]);
    double z = 0;
    for (std::size_t k = 0; k < cols; ++k) z += std::exp(f[k] - m);
    for (std::size_t k = 0; k < cols; ++k) p[i * cols + k] = std::exp(f[k] - m) / z;
  }
  return p;
}

template <class T>
std::vector<double> softmax_rows(const Tensor<T>& logits) {
  if (logits.ndim() != 2) throw InvalidShape("softmax expects N x K logits");
  std::vector<double> f(logits.data().begin(), logits.data().end());
  return softmax_rows(f, logits.dim(0), logits.dim(1));
}

/// Mean softmax cross-entropy L = (1/N) sum_i -log softmax(f_i)[y_i].
/// Gradient w.r.t. the logits is (softmax - onehot) / N.
template <class T>
LossReport<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw InvalidShape("softmax_cross_entropy expects N x K logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N)
    throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw ContractError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(K) + ")");

  LossReport<T> r;
  r.batch = N;
  r.classes = K;
  r.per_sample.resize(N);
  r.probs.resize(N * K);
  const auto f = logits.data();
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double m = f[i * K];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, static_cast<double>(f[i * K + k]));
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(f[i * K + k]) - m);
    const double log_z = std::log(z);
    for (std::size_t k = 0; k < K; ++k)
      r.probs[i * K + k] = std::exp(static_cast<double>(f[i * K + k]) - m - log_z);
    r.per_sample[i] = log_z - (static_cast<double>(f[i * K + labels[i]]) - m);
    total += r.per_sample[i];
  }
  const double mean = total / static_cast<double>(N);
  if (!std::isfinite(mean)) throw NumericError("softmax_cross_entropy produced a non-finite loss");

  auto ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  r.loss = detail::make_result<T>(
      "softmax_cross_entropy", Shape{1}, std::vector<T>{static_cast<T>(mean)}, {&logits},
      [ln, probs = r.probs, ys = std::move(ys), N, K](detail::Node<T>& o) {
        if (!ln->requires_grad) return;
        auto& g = ln->grad_buffer();
        const double scale = static_cast<double>(o.grad[0]) / static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const double onehot = static_cast<std::size_t>(ys[i]) == k ? 1.0 : 0.0;
            g[i * K + k] += static_cast<T>((probs[i * K + k] - onehot) * scale);
          }
      });
  return r;
}

template <class T>
LossReport<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(logits, std::span<const int>(labels));
}

}  // namespace patchforge
