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
#include <array>
#include <cmath>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "patchforge/model/graph.hpp"

namespace patchforge {

// ---------------------------------------------------------------------------
// RefineNet: six 3x3 convolutions (16, 32, 64, 64, 128, 128), 2x2 max pooling
// after the first five, global average pooling, FC 256, FC K. Each
// convolution is followed by batch norm and PReLU.
// ---------------------------------------------------------------------------

struct RefineNetConfig {
  Dim input_channels = 3;
  Dim classes = 4;
  std::vector<Dim> widths{16, 32, 64, 64, 128, 128};
  int pooled_convs = 5;  // 2x2 max pool after each of the first N convolutions
  Dim fc_width = 256;
};

inline void to_json(nlohmann::json& j, const RefineNetConfig& c) {
  j = {{"type", "refinenet"},
       {"input_channels", c.input_channels},
       {"classes", c.classes},
       {"widths", c.widths},
       {"pooled_convs", c.pooled_convs},
       {"fc_width", c.fc_width}};
}

inline void from_json(const nlohmann::json& j, RefineNetConfig& c) {
  RefineNetConfig d;
  c.input_channels = j.value("input_channels", d.input_channels);
  c.classes = j.value("classes", d.classes);
  c.widths = j.value("widths", d.widths);
  c.pooled_convs = j.value("pooled_convs", d.pooled_convs);
  c.fc_width = j.value("fc_width", d.fc_width);
}

// ---------------------------------------------------------------------------
// Dense and atrous dense connection (ADC) blocks.
// ---------------------------------------------------------------------------

struct DenseBlockConfig {
  Dim in_channels = 16;
  Dim growth = 8;
  std::vector<Dim> dilations{1, 1, 1, 1};  // one entry per unit
  Dim bottleneck_factor = 4;               // bottleneck width = factor * growth
  std::vector<bool> bottleneck_units{false, false, false, false};

  Dim units() const { return static_cast<Dim>(dilations.size()); }
  Dim unit_in_channels(Dim i) const { return in_channels + growth * (i - 1); }  // 1-based
  Dim out_channels() const { return in_channels + growth * units(); }

  void validate() const {
    if (in_channels < 1 || growth < 1 || dilations.empty())
      throw ContractError("dense block: in_channels, growth and unit count must be >= 1");
    if (bottleneck_units.size() != dilations.size())
      throw ContractError("dense block: bottleneck_units must have one entry per unit");
    for (Dim d : dilations)
      if (d < 1) throw ContractError("dense block: dilation must be >= 1");
  }
};

/// ADC block: four densely connected units with dilations (2, 1, 3, 1), so
/// each atrous convolution is followed by a common 3x3 convolution. Units
/// 2-4 compress their concatenated input through a 1x1 bottleneck.
struct ADCBlockConfig {
  Dim in_channels = 16;
  Dim growth = 8;
  Dim bottleneck_factor = 4;
  bool bottleneck = true;

  static constexpr std::array<Dim, 4> kDilations{2, 1, 3, 1};

  DenseBlockConfig dense() const {
    DenseBlockConfig d;
    d.in_channels = in_channels;
    d.growth = growth;
    d.dilations.assign(kDilations.begin(), kDilations.end());
    d.bottleneck_factor = bottleneck_factor;
    d.bottleneck_units = {false, bottleneck, bottleneck, bottleneck};
    return d;
  }

  void validate() const {
    if (in_channels < 1) throw ContractError("ADC block: in_channels must be >= 1");
    if (growth != 8 && growth != 16 && growth != 32)
      throw ContractError("ADC block: growth rate must be 8, 16 or 32");
  }
};

template <class T>
std::unique_ptr<DenseBlock<T>> build_dense_block(const DenseBlockConfig& cfg) {
  cfg.validate();
  auto block = std::make_unique<DenseBlock<T>>(cfg.in_channels, cfg.growth);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i)
    block->add_unit(cfg.dilations[i], cfg.bottleneck_units[i] ? cfg.bottleneck_factor * cfg.growth : 0);
  return block;
}

template <class T>
std::unique_ptr<DenseBlock<T>> build_adc_block(const ADCBlockConfig& cfg) {
  cfg.validate();
  return build_dense_block<T>(cfg.dense());
}

// ---------------------------------------------------------------------------
// ADN: stem 3x3 conv -> [ADC(k) -> transition] per growth rate -> NIN head
// (BN-PReLU-1x1 conv units) -> BN-PReLU -> global average pool -> FC K.
// Transitions are BN-PReLU-1x1 conv (channel compression) + 2x2 max pool.
// ---------------------------------------------------------------------------

struct AdnConfig {
  Dim input_channels = 3;
  Dim classes = 4;
  Dim stem_channels = 16;
  std::vector<Dim> growth_rates{8, 16, 32};
  std::vector<Dim> unit_dilations{2, 1, 3, 1};
  std::vector<bool> bottleneck_units{false, true, true, true};
  Dim bottleneck_factor = 4;
  double transition_compression = 0.5;
  std::vector<Dim> nin_widths{128, 128};

  DenseBlockConfig block(std::size_t b, Dim in_channels) const {
    DenseBlockConfig d;
    d.in_channels = in_channels;
    d.growth = growth_rates.at(b);
    d.dilations = unit_dilations;
    d.bottleneck_factor = bottleneck_factor;
    d.bottleneck_units = bottleneck_units;
    return d;
  }

  Dim transition_out(Dim in_channels) const {
    return std::max<Dim>(1, static_cast<Dim>(std::floor(static_cast<double>(in_channels) * transition_compression)));
  }
};

inline void to_json(nlohmann::json& j, const AdnConfig& c) {
  j = {{"type", "adn"},
       {"input_channels", c.input_channels},
       {"classes", c.classes},
       {"stem_channels", c.stem_channels},
       {"growth_rates", c.growth_rates},
       {"unit_dilations", c.unit_dilations},
       {"bottleneck_units", c.bottleneck_units},
       {"bottleneck_factor", c.bottleneck_factor},
       {"transition_compression", c.transition_compression},
       {"nin_widths", c.nin_widths}};
}

inline void from_json(const nlohmann::json& j, AdnConfig& c) {
  AdnConfig d;
  c.input_channels = j.value("input_channels", d.input_channels);
  c.classes = j.value("classes", d.classes);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
  c.growth_rates = j.value("growth_rates", d.growth_rates);
  c.unit_dilations = j.value("unit_dilations", d.unit_dilations);
  c.bottleneck_units = j.value("bottleneck_units", d.bottleneck_units);
  c.bottleneck_factor = j.value("bottleneck_factor", d.bottleneck_factor);
  c.transition_compression = j.value("transition_compression", d.transition_compression);
  c.nin_widths = j.value("nin_widths", d.nin_widths);
}

namespace detail {

template <class T>
std::unique_ptr<Sequential<T>> pre_activation_conv(Dim in, Dim out) {
  auto s = std::make_unique<Sequential<T>>();
  ConvSpec spec;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel_h = spec.kernel_w = 1;
  spec.bias = false;
  s->add("bn", std::make_unique<BatchNorm<T>>(in));
  s->add("act", std::make_unique<PReLU<T>>(in));
  s->add("conv", std::make_unique<Conv2d<T>>(spec));
  return s;
}

inline void require_classes(Dim k) {
  if (k < 2) throw ContractError("class count must be >= 2, got " + std::to_string(k));
}

}  // namespace detail

template <class T>
ModelGraph<T> build_refinenet(const RefineNetConfig& cfg) {
  detail::require_classes(cfg.classes);
  if (cfg.widths.empty() || cfg.pooled_convs < 0 || cfg.pooled_convs > static_cast<int>(cfg.widths.size()))
    throw ContractError("refinenet: invalid widths/pooling configuration");
  auto body = std::make_unique<Sequential<T>>();
  Dim c = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    body->add("conv" + n, std::make_unique<Conv2d<T>>(ConvSpec::same(c, cfg.widths[i], 3, 1, false)));
    body->add("bn" + n, std::make_unique<BatchNorm<T>>(cfg.widths[i]));
    body->add("act" + n, std::make_unique<PReLU<T>>(cfg.widths[i]));
    if (static_cast<int>(i) < cfg.pooled_convs) body->add("pool" + n, std::make_unique<Pool<T>>(PoolSpec::max(2, 2)));
    c = cfg.widths[i];
  }
  body->add("gap", std::make_unique<Pool<T>>(PoolSpec::global_avg()));
  body->add("flatten", std::make_unique<Flatten<T>>());
  body->add("fc1", std::make_unique<Linear<T>>(c, cfg.fc_width));
  body->add("act_fc1", std::make_unique<PReLU<T>>(cfg.fc_width));
  body->add("fc2", std::make_unique<Linear<T>>(cfg.fc_width, cfg.classes));
  return ModelGraph<T>(nlohmann::json(cfg), std::move(body), cfg.input_channels, cfg.classes,
                       Dim{1} << cfg.pooled_convs, "act_fc1");
}

template <class T>
ModelGraph<T> build_refinenet(Dim input_channels, Dim classes) {
  RefineNetConfig cfg;
  cfg.input_channels = input_channels;
  cfg.classes = classes;
  return build_refinenet<T>(cfg);
}

template <class T>
ModelGraph<T> build_adn(const AdnConfig& cfg) {
  detail::require_classes(cfg.classes);
  if (cfg.growth_rates.empty() || cfg.nin_widths.empty() || cfg.stem_channels < 1)
    throw ContractError("adn: growth_rates and nin_widths must be non-empty");
  auto body = std::make_unique<Sequential<T>>();
  body->add("stem", std::make_unique<Conv2d<T>>(ConvSpec::same(cfg.input_channels, cfg.stem_channels, 3, 1, false)));
  Dim c = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.growth_rates.size(); ++b) {
    const std::string n = std::to_string(b + 1);
    auto block = build_dense_block<T>(cfg.block(b, c));
    c = block->out_channels();
    body->add("adc" + n, std::move(block));
    const Dim t = cfg.transition_out(c);
    auto trans = detail::pre_activation_conv<T>(c, t);
    trans->add("pool", std::make_unique<Pool<T>>(PoolSpec::max(2, 2)));
    body->add("trans" + n, std::move(trans));
    c = t;
  }
  for (std::size_t i = 0; i < cfg.nin_widths.size(); ++i) {
    body->add("nin" + std::to_string(i + 1), detail::pre_activation_conv<T>(c, cfg.nin_widths[i]));
    c = cfg.nin_widths[i];
  }
  body->add("bn_out", std::make_unique<BatchNorm<T>>(c));
  body->add("act_out", std::make_unique<PReLU<T>>(c));
  body->add("gap", std::make_unique<Pool<T>>(PoolSpec::global_avg()));
  body->add("flatten", std::make_unique<Flatten<T>>());
  body->add("fc", std::make_unique<Linear<T>>(c, cfg.classes));
  return ModelGraph<T>(nlohmann::json(cfg), std::move(body), cfg.input_channels, cfg.classes,
                       Dim{1} << cfg.growth_rates.size(), "flatten");
}

/// Builds from an architecture descriptor ({"type": "refinenet"|"adn", ...}).
template <class T>
ModelGraph<T> build_model(const nlohmann::json& arch) {
  const std::string type = arch.value("type", "");
  if (type == "refinenet") return build_refinenet<T>(arch.get<RefineNetConfig>());
  if (type == "adn") return build_adn<T>(arch.get<AdnConfig>());
  throw ContractError("unknown architecture type '" + type + "'");
}

/// Dense blocks among the model's top-level layers, in order.
template <class T>
std::vector<const DenseBlock<T>*> dense_blocks(const ModelGraph<T>& model) {
  std::vector<const DenseBlock<T>*> out;
  for (const auto& [name, m] : model.body().children())
    if (const auto* b = dynamic_cast<const DenseBlock<T>*>(m.get())) out.push_back(b);
  return out;
}

/// He-normal weights (std sqrt(2 / fan_in)), zero biases and shifts, unit BN
/// scales, PReLU slopes at their 0.25 default, fresh running statistics.
/// Tensor i draws from its own stream derived from (seed, i).
template <class T>
void init_parameters(ModelGraph<T>& model, std::uint64_t seed) {
  auto state = model.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& p = state[i];
    auto v = p.tensor->mutable_data();
    switch (p.role) {
      case TensorRole::kWeight: {
        Rng rng(mix_seed(seed, i));
        const double std = std::sqrt(2.0 / static_cast<double>(p.fan_in));
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std));
        break;
      }
      case TensorRole::kBias:
      case TensorRole::kShift:
      case TensorRole::kRunningMean:
        std::fill(v.begin(), v.end(), T(0));
        break;
      case TensorRole::kScale:
      case TensorRole::kRunningVar:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case TensorRole::kSlope:
        std::fill(v.begin(), v.end(), static_cast<T>(kPReluInitSlope));
        break;
    }
  }
}

template <class T>
std::size_t count_parameters(const ModelGraph<T>& model) {
  return model.count_parameters();
}

/// Independent deep copy (same architecture, state and mode).
template <class T>
ModelGraph<T> clone_model(const ModelGraph<T>& model) {
  auto copy = build_model<T>(model.architecture());
  copy_state(model, copy);
  copy.set_mode(model.mode());
  return copy;
}

}  // namespace patchforge
