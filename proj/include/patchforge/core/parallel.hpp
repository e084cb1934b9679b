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
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace patchforge {

/// Worker cap for intra-op parallelism, read from PATCHFORGE_THREADS.
/// Unset or invalid means 1 (deterministic single-thread mode).
inline unsigned thread_cap() {
  static const unsigned cap = [] {
    const char* env = std::getenv("PATCHFORGE_THREADS");
    if (env == nullptr) return 1u;
    try {
      const int n = std::stoi(env);
      return n > 0 ? static_cast<unsigned>(n) : 1u;
    } catch (const std::exception&) {
      return 1u;
    }
  }();
  return cap;
}

/// Runs fn(i) for i in [0, n). Each index must write only its own outputs, so
/// results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_cap(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace patchforge
