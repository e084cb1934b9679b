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

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/core/ops.hpp"
#include "patchforge/nn/activation.hpp"
#include "patchforge/nn/batch_norm.hpp"
#include "patchforge/nn/concat.hpp"
#include "patchforge/nn/conv.hpp"
#include "patchforge/nn/pool.hpp"

namespace patchforge {

enum class TensorRole { kWeight, kBias, kScale, kShift, kSlope, kRunningMean, kRunningVar };

/// A named tensor owned by some layer. Buffers (running statistics) are
/// persisted but not trained.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  TensorRole role;
  std::size_t fan_in = 0;  // weights only

  bool trainable() const { return role != TensorRole::kRunningMean && role != TensorRole::kRunningVar; }
};

template <class T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual void set_mode(Mode) {}
  virtual void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) = 0;
  /// Convolutions and fully connected layers contained in this module.
  virtual int weighted_layers() const { return 0; }
};

template <class T>
class Conv2d : public Module<T> {
 public:
  explicit Conv2d(const ConvSpec& spec) : spec_(spec) {
    spec_.validate();
    weight_ = Tensor<T>::zeros(spec_.weight_shape());
    if (spec_.bias) bias_ = Tensor<T>::zeros({spec_.out_channels});
  }

  Tensor<T> forward(const Tensor<T>& x) override { return conv2d(x, weight_, bias_, spec_); }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_, TensorRole::kWeight,
                   static_cast<std::size_t>(spec_.in_channels * spec_.kernel_h * spec_.kernel_w)});
    if (spec_.bias) out.push_back({prefix + "bias", &bias_, TensorRole::kBias});
  }

  int weighted_layers() const override { return 1; }
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <class T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(Dim channels, double momentum = 0.1, double epsilon = 1e-5)
      : state_(BatchNormState<T>::make(channels, momentum, epsilon)) {}

  Tensor<T> forward(const Tensor<T>& x) override { return batch_norm(x, state_); }
  void set_mode(Mode m) override { state_.mode = m; }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "scale", &state_.scale, TensorRole::kScale});
    out.push_back({prefix + "shift", &state_.shift, TensorRole::kShift});
    out.push_back({prefix + "running_mean", &state_.running_mean, TensorRole::kRunningMean});
    out.push_back({prefix + "running_var", &state_.running_var, TensorRole::kRunningVar});
  }

  const BatchNormState<T>& state() const { return state_; }

 private:
  BatchNormState<T> state_;
};

template <class T>
class PReLU : public Module<T> {
 public:
  explicit PReLU(Dim channels) : state_(PReLUState<T>::make(channels)) {}

  Tensor<T> forward(const Tensor<T>& x) override { return prelu(x, state_); }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "slope", &state_.slope, TensorRole::kSlope});
  }

 private:
  PReLUState<T> state_;
};

template <class T>
class Pool : public Module<T> {
 public:
  explicit Pool(PoolSpec spec) : spec_(spec) {}
  Tensor<T> forward(const Tensor<T>& x) override { return pool2d(x, spec_); }
  void collect(const std::string&, std::vector<ParamRef<T>>&) override {}

 private:
  PoolSpec spec_;
};

/// N x C x 1 x 1 (or any NCHW) to N x (C*H*W).
template <class T>
class Flatten : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    return reshape(x, Shape{x.dim(0), static_cast<Dim>(x.numel() / x.dim(0))});
  }
  void collect(const std::string&, std::vector<ParamRef<T>>&) override {}
};

/// y = x W + b with W of shape (in, out).
template <class T>
class Linear : public Module<T> {
 public:
  Linear(Dim in, Dim out) : in_(in), weight_(Tensor<T>::zeros({in, out})), bias_(Tensor<T>::zeros({out})) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.ndim() != 2 || x.dim(1) != in_)
      throw InvalidShape("linear: input " + to_string(x.shape()) + ", expected N x " + std::to_string(in_));
    return linear(x, weight_, bias_);
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_, TensorRole::kWeight, static_cast<std::size_t>(in_)});
    out.push_back({prefix + "bias", &bias_, TensorRole::kBias});
  }
  int weighted_layers() const override { return 1; }

 private:
  Dim in_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

/// Named children run in order.
template <class T>
class Sequential : public Module<T> {
 public:
  Sequential& add(std::string name, std::unique_ptr<Module<T>> m) {
    children_.emplace_back(std::move(name), std::move(m));
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> h = x;
    for (auto& [name, m] : children_) h = m->forward(h);
    return h;
  }

  /// Output of the named child; throws ContractError if absent.
  Tensor<T> forward_until(const Tensor<T>& x, const std::string& stop) {
    Tensor<T> h = x;
    for (auto& [name, m] : children_) {
      h = m->forward(h);
      if (name == stop) return h;
    }
    throw ContractError("unknown layer '" + stop + "'");
  }

  void set_mode(Mode mode) override {
    for (auto& [name, m] : children_) m->set_mode(mode);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    for (auto& [name, m] : children_) m->collect(prefix + name + ".", out);
  }

  int weighted_layers() const override {
    int n = 0;
    for (const auto& [name, m] : children_) n += m->weighted_layers();
    return n;
  }

  const std::vector<std::pair<std::string, std::unique_ptr<Module<T>>>>& children() const { return children_; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module<T>>>> children_;
};

/// One dense-block unit: BN -> PReLU -> [1x1 bottleneck -> BN -> PReLU] ->
/// 3x3 convolution at the unit's dilation rate, emitting `growth` maps.
template <class T>
class DenseUnit : public Module<T> {
 public:
  DenseUnit(Dim in_channels, Dim growth, Dim dilation, Dim bottleneck_width)
      : in_channels_(in_channels), dilation_(dilation) {
    body_.add("bn", std::make_unique<BatchNorm<T>>(in_channels));
    body_.add("act", std::make_unique<PReLU<T>>(in_channels));
    Dim c = in_channels;
    if (bottleneck_width > 0) {
      ConvSpec b;
      b.in_channels = in_channels;
      b.out_channels = bottleneck_width;
      b.kernel_h = b.kernel_w = 1;
      b.bias = false;
      body_.add("reduce", std::make_unique<Conv2d<T>>(b));
      body_.add("reduce_bn", std::make_unique<BatchNorm<T>>(bottleneck_width));
      body_.add("reduce_act", std::make_unique<PReLU<T>>(bottleneck_width));
      c = bottleneck_width;
    }
    body_.add("conv", std::make_unique<Conv2d<T>>(ConvSpec::same(c, growth, 3, dilation, false)));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.dim(1) != in_channels_)
      throw InvalidShape("dense unit expects " + std::to_string(in_channels_) + " channels, got " +
                         std::to_string(x.dim(1)));
    return body_.forward(x);
  }
  void set_mode(Mode m) override { body_.set_mode(m); }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override { body_.collect(prefix, out); }
  int weighted_layers() const override { return body_.weighted_layers(); }

  Dim in_channels() const { return in_channels_; }
  Dim dilation() const { return dilation_; }

 private:
  Dim in_channels_;
  Dim dilation_;
  Sequential<T> body_;
};

/// Densely connected units: unit i sees the concatenation of the block input
/// and every earlier unit's output; the block emits all of them concatenated.
template <class T>
class DenseBlock : public Module<T> {
 public:
  DenseBlock(Dim in_channels, Dim growth) : in_channels_(in_channels), growth_(growth) {}

  void add_unit(Dim dilation, Dim bottleneck_width) {
    units_.push_back(std::make_unique<DenseUnit<T>>(out_channels(), growth_, dilation, bottleneck_width));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    std::vector<Tensor<T>> features{x};
    for (auto& u : units_) {
      Tensor<T> in = features.size() == 1 ? x : concat_channels(features);
      features.push_back(u->forward(in));
    }
    return features.size() == 1 ? x : concat_channels(features);
  }

  void set_mode(Mode m) override {
    for (auto& u : units_) u->set_mode(m);
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    for (std::size_t i = 0; i < units_.size(); ++i)
      units_[i]->collect(prefix + "unit" + std::to_string(i + 1) + ".", out);
  }
  int weighted_layers() const override {
    int n = 0;
    for (const auto& u : units_) n += u->weighted_layers();
    return n;
  }

  Dim in_channels() const { return in_channels_; }
  Dim growth() const { return growth_; }
  Dim out_channels() const { return in_channels_ + growth_ * static_cast<Dim>(units_.size()); }
  const std::vector<std::unique_ptr<DenseUnit<T>>>& units() const { return units_; }

 private:
  Dim in_channels_;
  Dim growth_;
  std::vector<std::unique_ptr<DenseUnit<T>>> units_;
};

}  // namespace patchforge
