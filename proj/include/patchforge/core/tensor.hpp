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
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "patchforge/core/error.hpp"
#include "patchforge/core/rng.hpp"

namespace patchforge {

using Dim = std::int64_t;
using Shape = std::vector<Dim>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw InvalidShape("shape must have at least one dimension");
  for (Dim d : shape)
    if (d < 1) throw InvalidShape("dimension < 1 in shape " + to_string(shape));
}

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (Dim d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

/// How `Tensor::create` fills a new buffer. Random fills carry their seed.
struct Fill {
  enum class Kind { kConstant, kUniform, kNormal };
  Kind kind = Kind::kConstant;
  double a = 0.0;  // constant value, uniform low, normal mean
  double b = 0.0;  // uniform high, normal stddev
  std::uint64_t seed = 0;

  static Fill constant(double value) { return {Kind::kConstant, value, 0.0, 0}; }
  static Fill uniform(std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    return {Kind::kUniform, lo, hi, seed};
  }
  static Fill normal(std::uint64_t seed, double mean = 0.0, double stddev = 1.0) {
    return {Kind::kNormal, mean, stddev, seed};
  }
};

template <class T>
class Tensor;
template <class T>
class GradTape;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool produced_by_op = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
struct TapeRecord {
  const char* op;
  NodePtr<T> output;
  std::vector<NodePtr<T>> inputs;
  // Reads output->grad, accumulates into inputs that require grad.
  std::function<void(Node<T>& output)> backward;
};

}  // namespace detail

/// Dense row-major N-d array. Copies share storage; ops never write to their
/// inputs. Gradients flow only through ops executed while a `GradTape` is
/// active on the current thread.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor create(const Shape& shape, const Fill& fill) {
    check_shape(shape);
    std::vector<T> v(element_count(shape));
    switch (fill.kind) {
      case Fill::Kind::kConstant:
        std::fill(v.begin(), v.end(), static_cast<T>(fill.a));
        break;
      case Fill::Kind::kUniform: {
        Rng rng(fill.seed);
        for (auto& x : v) x = static_cast<T>(rng.uniform(fill.a, fill.b));
        break;
      }
      case Fill::Kind::kNormal: {
        Rng rng(fill.seed);
        for (auto& x : v) x = static_cast<T>(rng.normal(fill.a, fill.b));
        break;
      }
    }
    return Tensor(shape, std::move(v));
  }

  static Tensor zeros(const Shape& shape) { return create(shape, Fill::constant(0.0)); }

  Tensor(const Shape& shape, std::vector<T> values) {
    check_shape(shape);
    if (values.size() != element_count(shape))
      throw InvalidShape("value count " + std::to_string(values.size()) +
                         " does not match shape " + to_string(shape));
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = shape;
    node_->value = std::move(values);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  Dim dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access. Reserved for parameters, optimizers and loaders.
  std::span<T> mutable_data() { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of the values, detached from any tape.
  Tensor clone() const { return Tensor(shape(), node_->value); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const detail::NodePtr<T>& node() const { return node_; }
  explicit Tensor(detail::NodePtr<T> node) : node_(std::move(node)) {}

 private:
  detail::NodePtr<T> node_;
};

/// Records differentiable ops executed on this thread while alive. Nested
/// tapes shadow outer ones until destroyed.
template <class T>
class GradTape {
 public:
  GradTape() : previous_(active_) { active_ = this; }
  ~GradTape() { active_ = previous_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept { return active_; }

  std::size_t size() const noexcept { return records_.size(); }

  void record(detail::TapeRecord<T> rec) { records_.push_back(std::move(rec)); }

  /// Seeds d(root)/d(root) = 1 and runs every record once in reverse order.
  /// Leaves that require grad accumulate into their grad buffers. The tape
  /// is empty afterwards.
  void backward(const Tensor<T>& root) {
    if (!root.defined() || root.numel() != 1)
      throw ContractError("backward root must be a scalar tensor");
    std::size_t end = records_.size();
    while (end > 0 && records_[end - 1].output != root.node()) --end;
    if (end == 0) throw StateError("backward root was not produced under this tape");

    root.node()->grad.assign(1, T(1));
    for (std::size_t i = end; i-- > 0;) {
      auto& rec = records_[i];
      if (rec.output->grad.empty()) continue;
      rec.backward(*rec.output);
    }
    for (auto& rec : records_)
      for (auto& in : rec.inputs)
        if (in->requires_grad && !in->produced_by_op) in->grad_buffer();
    records_.clear();
  }

 private:
  inline static thread_local GradTape* active_ = nullptr;
  GradTape* previous_;
  std::vector<detail::TapeRecord<T>> records_;
};

/// Backpropagates from a scalar through the tape active on this thread.
template <class T>
void backward(const Tensor<T>& root) {
  auto* tape = GradTape<T>::active();
  if (tape == nullptr) throw StateError("backward() called with no active GradTape");
  tape->backward(root);
}

namespace detail {

// Exponent-field test on the raw bits; an integer OR-reduction vectorizes
// where an isfinite loop does not.
template <class T>
void ensure_finite(const std::vector<T>& v, const char* op) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (const T& x : v) {
    const Bits b = std::bit_cast<Bits>(x);
    bad |= static_cast<Bits>((b & mask) == mask);
  }
  if (bad != 0) throw NumericError(std::string(op) + " produced a non-finite value");
}

/// Wraps freshly computed values as an op result and, when a tape is active
/// and some input needs gradients, records `rule` on it.
template <class T, class Rule>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<NodePtr<T>> inputs, Rule&& rule) {
  ensure_finite(values, op);
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->value = std::move(values);
  out->produced_by_op = true;
  auto* tape = GradTape<T>::active();
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (tape != nullptr && needs) {
    out->requires_grad = true;
    tape->record(TapeRecord<T>{op, out, std::move(inputs), std::forward<Rule>(rule)});
  }
  return Tensor<T>(out);
}

template <class T, class Rule>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  std::vector<NodePtr<T>> nodes;
  for (const auto* in : inputs)
    if (in->defined()) nodes.push_back(in->node());
  return make_result<T>(op, std::move(shape), std::move(values), std::move(nodes),
                        std::forward<Rule>(rule));
}

template <class T>
void accumulate(Node<T>& node, std::span<const T> g) {
  if (!node.requires_grad) return;
  auto& buf = node.grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

}  // namespace patchforge
