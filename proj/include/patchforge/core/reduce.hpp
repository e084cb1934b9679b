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

// Fixed-order reductions. Eigen's vectorized sum() peels a prefix up to the
// first aligned element, so its rounding depends on the buffer address.
// These sum in eight interleaved double lanes instead, which keeps the
// result a function of the values alone.

#pragma once

#include <cstddef>

namespace patchforge {

/// sum_{i<n} term(i), accumulated in double.
template <class F>
double lane_sum(std::size_t n, F&& term) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += static_cast<double>(term(i + l));
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += static_cast<double>(term(i));
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

template <class T>
double lane_sum(const T* p, std::size_t n) {
  return lane_sum(n, [p](std::size_t i) { return p[i]; });
}

}  // namespace patchforge
