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
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "patchforge/model/layers.hpp"

namespace patchforge {

/// An assembled network: a named top-level layer sequence plus the
/// architecture descriptor it was built from. Forward always yields N x K
/// logits for any input at least `min_spatial()` pixels on a side.
template <class T>
class ModelGraph {
 public:
  ModelGraph(nlohmann::json architecture, std::unique_ptr<Sequential<T>> body, Dim input_channels,
             Dim classes, Dim min_spatial, std::string penultimate)
      : architecture_(std::move(architecture)),
        body_(std::move(body)),
        input_channels_(input_channels),
        classes_(classes),
        min_spatial_(min_spatial),
        penultimate_(std::move(penultimate)) {
    std::set<std::string> seen;
    for (const auto& p : state())
      if (!seen.insert(p.name).second) throw ContractError("duplicate parameter name " + p.name);
  }

  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const nlohmann::json& architecture() const { return architecture_; }
  Dim input_channels() const { return input_channels_; }
  Dim classes() const { return classes_; }
  Dim min_spatial() const { return min_spatial_; }
  Mode mode() const { return mode_; }

  void set_mode(Mode m) {
    mode_ = m;
    body_->set_mode(m);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    check_input(x);
    return body_->forward(x);
  }

  /// Activations after the named top-level layer. "penultimate" names the
  /// feature layer right before the classifier.
  Tensor<T> forward_to(const Tensor<T>& x, const std::string& layer) {
    check_input(x);
    return body_->forward_until(x, layer == "penultimate" ? penultimate_ : layer);
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (const auto& [name, m] : body_->children()) names.push_back(name);
    return names;
  }
  const std::string& penultimate_layer() const { return penultimate_; }

  /// Every persisted tensor, in a stable order.
  std::vector<ParamRef<T>> state() const {
    std::vector<ParamRef<T>> out;
    body_->collect("", out);
    return out;
  }

  /// Trainable tensors only.
  std::vector<ParamRef<T>> parameters() const {
    std::vector<ParamRef<T>> out;
    for (auto& p : state())
      if (p.trainable()) out.push_back(p);
    return out;
  }

  std::size_t count_parameters() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->numel();
    return n;
  }

  int weighted_layer_count() const { return body_->weighted_layers(); }

  const Sequential<T>& body() const { return *body_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != input_channels_)
      throw InvalidShape("model expects N x " + std::to_string(input_channels_) + " x H x W, got " +
                         to_string(x.shape()));
    if (x.dim(2) < min_spatial_ || x.dim(3) < min_spatial_)
      throw InvalidShape("model input " + to_string(x.shape()) + " below minimum spatial size " +
                         std::to_string(min_spatial_));
  }

  nlohmann::json architecture_;
  std::unique_ptr<Sequential<T>> body_;
  Dim input_channels_;
  Dim classes_;
  Dim min_spatial_;
  std::string penultimate_;
  Mode mode_ = Mode::kTrain;
};

/// Copies every persisted tensor of `from` into `to` by name.
template <class T>
void copy_state(const ModelGraph<T>& from, ModelGraph<T>& to) {
  auto src = from.state();
  auto dst = to.state();
  if (src.size() != dst.size()) throw ContractError("copy_state: architectures differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor->shape() != dst[i].tensor->shape())
      throw ContractError("copy_state: mismatch at " + src[i].name);
    auto d = dst[i].tensor->mutable_data();
    auto s = src[i].tensor->data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

}  // namespace patchforge
