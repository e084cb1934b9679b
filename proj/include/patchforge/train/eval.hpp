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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "patchforge/core/parallel.hpp"
#include "patchforge/data/dataset.hpp"
#include "patchforge/model/graph.hpp"
#include "patchforge/nn/loss.hpp"

namespace patchforge {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
    if (k < 1) throw ContractError("confusion matrix needs at least one class");
  }

  int classes() const { return k_; }

  void add(int truth, int predicted) {
    if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
      throw ContractError("confusion matrix index out of range");
    ++counts_[static_cast<std::size_t>(truth) * k_ + predicted];
  }

  std::int64_t at(int truth, int predicted) const { return counts_.at(static_cast<std::size_t>(truth) * k_ + predicted); }

  std::int64_t row_sum(int truth) const {
    std::int64_t s = 0;
    for (int j = 0; j < k_; ++j) s += at(truth, j);
    return s;
  }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int i = 0; i < k_; ++i) s += at(i, i);
    return s;
  }

  /// trace / total; 0 for an empty matrix.
  double accuracy() const { return total() == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(total()); }

  /// M[k,k] / row k; a class with no samples reports 0.
  double class_accuracy(int k) const {
    const auto n = row_sum(k);
    return n == 0 ? 0.0 : static_cast<double>(at(k, k)) / static_cast<double>(n);
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_ = 0;
  std::vector<std::int64_t> counts_;
};

struct EvalReport {
  std::string split;
  double aca = 0;                 // overall: correct / samples
  std::vector<double> per_class;  // M[k,k] / row k
  ConfusionMatrix confusion;
  std::size_t samples = 0;

  /// Unweighted mean of the per-class rates.
  double mean_class_aca() const {
    if (per_class.empty()) return 0.0;
    double s = 0;
    for (double a : per_class) s += a;
    return s / static_cast<double>(per_class.size());
  }
};

inline EvalReport make_report(std::span<const int> truth, std::span<const int> predicted, int classes,
                              std::string split = "eval") {
  if (truth.size() != predicted.size()) throw ContractError("truth and prediction counts differ");
  EvalReport r;
  r.split = std::move(split);
  r.confusion = ConfusionMatrix(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) r.confusion.add(truth[i], predicted[i]);
  r.samples = truth.size();
  r.aca = r.confusion.accuracy();
  for (int k = 0; k < classes; ++k) r.per_class.push_back(r.confusion.class_accuracy(k));
  return r;
}

/// Index of the largest entry; the first one wins on ties.
template <class V>
int argmax_first(std::span<const V> row) {
  if (row.empty()) throw ContractError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

struct Scores {
  std::size_t classes = 0;
  std::vector<double> logits;  // N x K
  std::vector<double> probs;   // N x K softmax
  std::vector<int> predicted;  // argmax of logits

  std::span<const double> prob_row(std::size_t i) const { return {probs.data() + i * classes, classes}; }
  double max_prob(std::size_t i) const {
    auto r = prob_row(i);
    return *std::max_element(r.begin(), r.end());
  }
};

/// Forward pass over every record in chunks of `batch`. Needs eval mode so
/// the output does not depend on chunking.
template <class T>
Scores score(ModelGraph<T>& model, const PatchSet<T>& data, int batch = 16) {
  if (model.mode() != Mode::kEval) throw StateError("scoring requires the model in eval mode");
  if (batch < 1) throw ContractError("batch must be >= 1");
  Scores s;
  s.classes = static_cast<std::size_t>(model.classes());
  const std::size_t n = data.size(), k = s.classes;
  s.logits.resize(n * k);
  const std::size_t b = static_cast<std::size_t>(batch);
  const std::size_t chunks = (n + b - 1) / b;
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = c * b; i < std::min(n, (c + 1) * b); ++i) rows.push_back(i);
    const auto out = model.forward(data.batch(rows));
    const auto v = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < k; ++j) s.logits[rows[i] * k + j] = static_cast<double>(v[i * k + j]);
  });
  s.probs = softmax_rows(std::span<const double>(s.logits), n, k);
  for (std::size_t i = 0; i < n; ++i)
    s.predicted.push_back(argmax_first(std::span<const double>(s.logits.data() + i * k, k)));
  return s;
}

template <class T>
EvalReport evaluate(ModelGraph<T>& model, const PatchSet<T>& data, std::string split = "eval", int batch = 16) {
  const auto s = score(model, data, batch);
  return make_report(data.labels(), s.predicted, static_cast<int>(model.classes()), std::move(split));
}

// ---------------------------------------------------------------------------
// Slide-level voting.
// ---------------------------------------------------------------------------

/// Plurality of patch labels. A tie goes to the tied class whose voters have
/// the larger summed confidence, then to the lowest class index.
inline int vote(std::span<const int> labels, std::span<const double> confidences) {
  if (labels.empty()) throw ContractError("vote needs at least one patch");
  if (labels.size() != confidences.size()) throw ContractError("vote: label and confidence counts differ");
  // Confidences are summed in sorted order so patch order cannot matter.
  std::map<int, std::vector<double>> voters;
  for (std::size_t i = 0; i < labels.size(); ++i) voters[labels[i]].push_back(confidences[i]);
  std::map<int, std::pair<std::size_t, double>> tally;
  for (auto& [c, v] : voters) {
    std::sort(v.begin(), v.end());
    double s = 0;
    for (double x : v) s += x;
    tally[c] = {v.size(), s};
  }
  int best = tally.begin()->first;
  for (const auto& [c, t] : tally) {
    const auto& b = tally.at(best);
    if (t.first > b.first || (t.first == b.first && t.second > b.second)) best = c;
  }
  return best;
}

struct PatchPrediction {
  std::string slide;
  int label = 0;
  double confidence = 0;  // softmax probability of `label`
};

/// Slide id -> fused label.
inline std::map<std::string, int> fuse_slice_vote(std::span<const PatchPrediction> preds) {
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> by_slide;
  for (const auto& p : preds) {
    by_slide[p.slide].first.push_back(p.label);
    by_slide[p.slide].second.push_back(p.confidence);
  }
  std::map<std::string, int> out;
  for (const auto& [slide, v] : by_slide) out[slide] = vote(v.first, v.second);
  return out;
}

// ---------------------------------------------------------------------------
// Feature export and report files.
// ---------------------------------------------------------------------------

struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::size_t dim = 0;
  std::vector<double> values;  // rows x dim
};

/// Activations after `layer` ("penultimate" or a top-level layer name),
/// flattened per patch.
template <class T>
FeatureTable export_features(ModelGraph<T>& model, const PatchSet<T>& data, const std::string& layer = "penultimate",
                             int batch = 16) {
  if (model.mode() != Mode::kEval) throw StateError("feature export requires the model in eval mode");
  const auto names = model.layer_names();
  if (layer != "penultimate" && std::find(names.begin(), names.end(), layer) == names.end())
    throw ContractError("unknown layer '" + layer + "'");
  FeatureTable f;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch)); ++i) rows.push_back(i);
    const auto out = model.forward_to(data.batch(rows), layer);
    const std::size_t d = out.numel() / rows.size();
    if (f.dim == 0) f.dim = d;
    if (d != f.dim) throw ContractError("feature dimension changed between batches");
    for (T v : out.data()) f.values.push_back(static_cast<double>(v));
    for (auto r : rows) {
      f.ids.push_back(data.records()[r].id);
      f.labels.push_back(data.labels()[r]);
    }
  }
  return f;
}

namespace detail {
inline std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace detail

inline void write_features_csv(const FeatureTable& f, const std::filesystem::path& path) {
  auto os = detail::open_csv(path);
  os << "id,label";
  for (std::size_t j = 0; j < f.dim; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < f.ids.size(); ++i) {
    os << f.ids[i] << ',' << f.labels[i];
    for (std::size_t j = 0; j < f.dim; ++j) os << ',' << detail::fmt(f.values[i * f.dim + j]);
    os << '\n';
  }
}

inline void write_class_aca_csv(const EvalReport& r, const std::vector<std::string>& classes,
                                const std::filesystem::path& path) {
  auto os = detail::open_csv(path);
  os << "class,aca\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k)
    os << (k < classes.size() ? classes[k] : std::to_string(k)) << ',' << detail::fmt(r.per_class[k]) << '\n';
  os << "overall," << detail::fmt(r.aca) << '\n';
}

/// Header row of predicted classes, then one row per true class.
inline void write_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& classes,
                                const std::filesystem::path& path) {
  auto os = detail::open_csv(path);
  auto name = [&](int k) { return k < static_cast<int>(classes.size()) ? classes[k] : std::to_string(k); };
  os << "true\\predicted";
  for (int j = 0; j < m.classes(); ++j) os << ',' << name(j);
  os << '\n';
  for (int i = 0; i < m.classes(); ++i) {
    os << name(i);
    for (int j = 0; j < m.classes(); ++j) os << ',' << m.at(i, j);
    os << '\n';
  }
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r, const std::vector<std::string>& classes) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["samples"] = r.samples;
  j["aca"] = r.aca;
  j["mean_class_aca"] = r.mean_class_aca();
  j["classes"] = classes;
  j["per_class"] = r.per_class;
  auto rows = nlohmann::ordered_json::array();
  for (int i = 0; i < r.confusion.classes(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (int k = 0; k < r.confusion.classes(); ++k) row.push_back(r.confusion.at(i, k));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j;
}

}  // namespace patchforge
