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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "patchforge/core/rng.hpp"
#include "patchforge/data/dataset.hpp"
#include "patchforge/model/graph.hpp"
#include "patchforge/nn/loss.hpp"

namespace patchforge {

/// Mini-batch SGD settings. The learning rate runs at `lr` until the first
/// milestone, at `lr_second` until the second, and is multiplied by
/// `lr_decay` at every later milestone.
struct TrainConfig {
  int batch = 16;
  double lr = 0.05;
  double lr_second = 0.01;
  double lr_decay = 0.1;
  std::vector<int> milestones;  // epoch indices; empty = ceil(E/3), ceil(2E/3)
  double momentum = 0.9;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::string precision = "fp32";

  void validate() const {
    if (batch < 1) throw ContractError("batch must be >= 1");
    if (!(lr > 0) || !(lr_second > 0) || !(lr_decay > 0)) throw ContractError("learning rates must be > 0");
    if (momentum < 0 || momentum >= 1) throw ContractError("momentum must be in [0, 1)");
    if (epochs < 0) throw ContractError("epochs must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i)
      if (milestones[i] < 1 || (i > 0 && milestones[i] <= milestones[i - 1]))
        throw ContractError("milestones must be positive and strictly increasing");
    if (precision != "fp32") throw ContractError("only fp32 training is supported");
  }

  std::vector<int> resolved_milestones() const {
    if (!milestones.empty()) return milestones;
    std::vector<int> out;
    for (int k : {1, 2}) {
      const int m = std::max(1, (k * epochs + 2) / 3);
      if (out.empty() || m > out.back()) out.push_back(m);
    }
    return out;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch", c.batch},         {"lr", c.lr},       {"lr_second", c.lr_second}, {"lr_decay", c.lr_decay},
       {"milestones", c.milestones}, {"momentum", c.momentum}, {"epochs", c.epochs}, {"seed", c.seed},
       {"precision", c.precision}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch = j.value("batch", d.batch);
  c.lr = j.value("lr", d.lr);
  c.lr_second = j.value("lr_second", d.lr_second);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.milestones = j.value("milestones", d.milestones);
  c.momentum = j.value("momentum", d.momentum);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.precision = j.value("precision", d.precision);
}

/// Learning rate used throughout (0-based) epoch `epoch`.
inline double learning_rate(const TrainConfig& cfg, int epoch) {
  const auto ms = cfg.resolved_milestones();
  int passed = 0;
  for (int m : ms) passed += epoch >= m;
  if (passed == 0) return cfg.lr;
  return cfg.lr_second * std::pow(cfg.lr_decay, passed - 1);
}

struct EpochLog {
  int epoch = 0;
  double loss = 0;  // mean over the epoch's samples
  double lr = 0;
  double accuracy = 0;  // training accuracy under the running weights
};

struct TrainResult {
  std::vector<EpochLog> epochs;
};

/// Momentum SGD state: v <- momentum * v + g ; p <- p - lr * v.
template <class T>
class Sgd {
 public:
  Sgd(std::vector<ParamRef<T>> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
    for (auto& p : params_) velocity_.emplace_back(p.tensor->numel(), T(0));
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* t = params_[i].tensor;
      if (!t->has_grad()) continue;
      const auto g = t->grad();
      auto v = t->mutable_data();
      auto& vel = velocity_[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        vel[k] = static_cast<T>(momentum_) * vel[k] + g[k];
        v[k] -= static_cast<T>(lr) * vel[k];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

 private:
  std::vector<ParamRef<T>> params_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

inline std::string format_rate(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lr);
  return buf;
}

/// Trains on every record of `data` (callers pass alive patches only) with
/// seeded per-epoch shuffling. The model is left in train mode. `stop_after`,
/// when given, ends training early once it returns true for an epoch; the
/// schedule is still the one for cfg.epochs.
template <class T>
TrainResult train(ModelGraph<T>& model, const PatchSet<T>& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {},
                  const std::function<bool(const EpochLog&)>& stop_after = {}) {
  cfg.validate();
  TrainResult result;
  if (cfg.epochs == 0) return result;
  if (data.empty()) throw ContractError("training set is empty");
  for (int y : data.labels())
    if (y < 0 || y >= model.classes()) throw ContractError("label " + std::to_string(y) + " outside model classes");

  auto params = model.parameters();
  for (auto& p : params) p.tensor->set_requires_grad(true);
  Sgd<T> opt(params, cfg.momentum);
  model.set_mode(Mode::kTrain);

  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const auto x = data.batch(rows);
      const auto y = data.batch_labels(rows);
      try {
        GradTape<T> tape;
        auto report = softmax_cross_entropy(model.forward(x), y);
        backward(report.loss);
        for (const auto& p : params)
          if (p.tensor->has_grad())
            for (T g : p.tensor->grad())
              if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        for (std::size_t i = 0; i < y.size(); ++i) {
          loss_sum += report.per_sample[i];
          std::size_t best = 0;
          for (std::size_t k = 1; k < report.classes; ++k)
            if (report.probs[i * report.classes + k] > report.probs[i * report.classes + best]) best = k;
          correct += static_cast<int>(best) == y[i];
        }
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + " at learning rate " +
                              format_rate(lr) + ": " + e.what());
      }
      opt.step(lr);
      opt.zero_grad();
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(data.size()), lr,
                 static_cast<double>(correct) / static_cast<double>(data.size())};
    if (!std::isfinite(log.loss))
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + " at learning rate " +
                            format_rate(lr));
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (stop_after && stop_after(log)) break;
  }
  return result;
}

inline void write_loss_csv(const TrainResult& r, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "epoch,loss,lr\n";
  char buf[96];
  for (const auto& e : r.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.loss, e.lr);
    os << buf;
  }
}

}  // namespace patchforge
