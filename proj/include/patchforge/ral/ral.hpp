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

// Reversed active learning. Each iteration scores every alive patch with the
// previous model, drops the ones whose top softmax probability is below
// theta, then drops every remaining variant of an original that has lost at
// least g variants so far, and finally fine-tunes on what is left. The loop
// keeps the manifest and model of the best validation iteration.
//
// The engine is model-agnostic: scoring, fine-tuning and validation are
// callbacks. run_ral_model() wires them to a ModelGraph.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/data/dataset.hpp"
#include "patchforge/data/manifest.hpp"
#include "patchforge/model/zoo.hpp"
#include "patchforge/train/eval.hpp"
#include "patchforge/train/train.hpp"

namespace patchforge {

struct RALConfig {
  double theta = 0.5;
  int group_threshold = 4;
  int max_iterations = 5;
  int patience = 1;
  double min_improvement = 0.0;
  int variants = 8;

  void validate() const {
    if (!(theta >= 0.0 && theta < 1.0)) throw ContractError("theta must be in [0, 1)");
    if (variants < 1) throw ContractError("variants must be >= 1");
    if (group_threshold < 1 || group_threshold > variants)
      throw ContractError("group threshold must be in [1, variants]");
    if (max_iterations < 1) throw ContractError("max iterations must be >= 1");
    if (patience < 1) throw ContractError("patience must be >= 1");
    if (min_improvement < 0) throw ContractError("min improvement must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const RALConfig& c) {
  j = {{"theta", c.theta},       {"group_threshold", c.group_threshold}, {"max_iterations", c.max_iterations},
       {"patience", c.patience}, {"min_improvement", c.min_improvement}, {"variants", c.variants}};
}

inline void from_json(const nlohmann::json& j, RALConfig& c) {
  RALConfig d;
  c.theta = j.value("theta", d.theta);
  c.group_threshold = j.value("group_threshold", d.group_threshold);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.patience = j.value("patience", d.patience);
  c.min_improvement = j.value("min_improvement", d.min_improvement);
  c.variants = j.value("variants", d.variants);
}

enum class RemovalReason { kConfidence, kGroup };

inline const char* reason_name(RemovalReason r) { return r == RemovalReason::kConfidence ? "confidence" : "group"; }

struct AuditEntry {
  std::string patch;
  int iteration = 0;
  RemovalReason reason = RemovalReason::kConfidence;
  double confidence = 0;  // top softmax probability under M_{t-1}

  bool operator==(const AuditEntry&) const = default;
};

struct HistoryRow {
  int iteration = 0;  // 0 = before any refinement
  std::size_t set_size = 0;
  double val_aca = 0;

  bool operator==(const HistoryRow&) const = default;
};

struct RALState {
  int t = 1;                               // next iteration to run
  Manifest manifest;                       // D_t as alive flags
  std::map<std::int64_t, int> mx;          // original index -> removals so far
  std::vector<HistoryRow> history;
  std::vector<AuditEntry> audit;

  explicit RALState(Manifest m = {}) : manifest(std::move(m)) {
    for (const auto& r : manifest.records) mx.emplace(r.orig_index, 0);
  }
};

/// Top softmax probability per alive record, in manifest order of the alive
/// records handed in.
using ScoreFn = std::function<std::vector<double>(const std::vector<PatchRecord>& alive)>;
/// Fine-tunes the current model on the refined manifest (alive records).
using FineTuneFn = std::function<void(const Manifest& refined, int iteration)>;
/// Validation ACA of the current model.
using ValidateFn = std::function<double()>;

struct PassResult {
  std::size_t confidence_removed = 0;
  std::size_t group_removed = 0;
};

/// Confidence and group removal for one iteration, given the top probability
/// of each alive record (same order as Manifest::alive_records()).
inline PassResult apply_removals(RALState& s, const RALConfig& cfg, std::span<const double> confidence) {
  std::vector<std::size_t> alive_idx;
  for (std::size_t i = 0; i < s.manifest.records.size(); ++i)
    if (s.manifest.records[i].alive) alive_idx.push_back(i);
  if (confidence.size() != alive_idx.size())
    throw ContractError("got " + std::to_string(confidence.size()) + " scores for " +
                        std::to_string(alive_idx.size()) + " alive patches");
  PassResult out;
  std::map<std::size_t, double> conf_of;
  for (std::size_t k = 0; k < alive_idx.size(); ++k) {
    auto& r = s.manifest.records[alive_idx[k]];
    conf_of[alive_idx[k]] = confidence[k];
    if (confidence[k] < cfg.theta) {
      r.alive = false;
      ++s.mx[r.orig_index];
      s.audit.push_back({r.id, s.t, RemovalReason::kConfidence, confidence[k]});
      ++out.confidence_removed;
    }
  }
  for (auto i : alive_idx) {
    auto& r = s.manifest.records[i];
    if (r.alive && s.mx[r.orig_index] >= cfg.group_threshold) {
      r.alive = false;
      s.audit.push_back({r.id, s.t, RemovalReason::kGroup, conf_of[i]});
      ++out.group_removed;
    }
  }
  return out;
}

/// One iteration: score D_{t-1} with M_{t-1}, remove, fine-tune to get M_t.
/// A null `fine_tune` keeps the model frozen.
inline PassResult ral_iteration(RALState& s, const RALConfig& cfg, const ScoreFn& score_fn,
                                const FineTuneFn& fine_tune) {
  if (s.t < 1) throw StateError("iteration counter must start at 1");
  const auto alive = s.manifest.alive_records();
  const auto conf = score_fn(alive);
  const auto pass = apply_removals(s, cfg, conf);
  if (s.manifest.alive_count() == 0)
    throw StateError("iteration " + std::to_string(s.t) + " removed every patch; theta " + format_rate(cfg.theta) +
                     " is likely mis-set");
  if (fine_tune) fine_tune(s.manifest, s.t);
  ++s.t;
  return pass;
}

struct RALOutcome {
  Manifest best_manifest;
  int best_iteration = 0;
  double best_aca = 0;
  std::vector<HistoryRow> history;
  std::vector<AuditEntry> audit;  // every removal of every iteration run
  std::map<std::int64_t, int> mx;
};

/// Runs iterations until validation stops improving for `patience`
/// iterations or `max_iterations` have run. An iteration counts as an
/// improvement when its ACA beats the best so far by at least
/// `min_improvement` (and strictly). `on_best` fires whenever a new best is
/// recorded, including iteration 0, so callers can snapshot the model.
inline RALOutcome run_ral(Manifest d0, const RALConfig& cfg, const ScoreFn& score_fn, const FineTuneFn& fine_tune,
                          const ValidateFn& validate, const std::function<void(int iteration)>& on_best = {},
                          const std::function<void(const HistoryRow&)>& on_row = {}) {
  cfg.validate();
  RALState s(std::move(d0));
  RALOutcome out;
  auto record = [&](int it) {
    HistoryRow row{it, s.manifest.alive_count(), validate()};
    s.history.push_back(row);
    if (on_row) on_row(row);
    return row.val_aca;
  };
  out.best_aca = record(0);
  out.best_manifest = s.manifest;
  out.best_iteration = 0;
  if (on_best) on_best(0);
  int stale = 0;
  while (s.t <= cfg.max_iterations) {
    const int it = s.t;
    ral_iteration(s, cfg, score_fn, fine_tune);
    const double aca = record(it);
    if (aca > out.best_aca && aca - out.best_aca >= cfg.min_improvement) {
      out.best_aca = aca;
      out.best_iteration = it;
      out.best_manifest = s.manifest;
      if (on_best) on_best(it);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  out.history = s.history;
  out.audit = s.audit;
  out.mx = s.mx;
  out.best_manifest.provenance["ral"] = {{"config", cfg}, {"best_iteration", out.best_iteration}};
  return out;
}

// ---------------------------------------------------------------------------
// Model wiring.
// ---------------------------------------------------------------------------

struct RALTrainPlan {
  TrainConfig fine_tune;  // epochs per iteration; seed is mixed with t
  int score_batch = 16;
};

template <class T>
struct RALModelOutcome {
  RALOutcome ral;
  ModelGraph<T> best_model;
};

/// Scores with and fine-tunes `model` in place; the returned best model is an
/// independent copy taken at the best iteration.
template <class T>
RALModelOutcome<T> run_ral_model(Manifest d0, ModelGraph<T>& model, std::shared_ptr<SlideCache> slides,
                                 const RALConfig& cfg, const RALTrainPlan& plan, const PatchSet<T>& validation,
                                 const std::function<void(const HistoryRow&)>& on_row = {}) {
  ScoreFn score_fn = [&](const std::vector<PatchRecord>& alive) {
    model.set_mode(Mode::kEval);
    PatchSet<T> set(slides, alive, LabelSource::kAssigned);
    const auto s = score(model, set, plan.score_batch);
    std::vector<double> top(alive.size());
    for (std::size_t i = 0; i < alive.size(); ++i) top[i] = s.max_prob(i);
    return top;
  };
  FineTuneFn tune = [&](const Manifest& refined, int t) {
    TrainConfig c = plan.fine_tune;
    c.seed = mix_seed(plan.fine_tune.seed, static_cast<std::uint64_t>(t));
    PatchSet<T> set(slides, refined.alive_records(), LabelSource::kAssigned);
    train(model, set, c);
  };
  ValidateFn val = [&] {
    model.set_mode(Mode::kEval);
    return evaluate(model, validation, "validation", plan.score_batch).aca;
  };
  std::optional<ModelGraph<T>> best;
  auto keep = [&](int) {
    if (!best) best.emplace(clone_model(model));
    else copy_state(model, *best);
  };
  auto ral = run_ral(std::move(d0), cfg, score_fn, tune, val, keep, on_row);
  best->set_mode(Mode::kEval);
  return {std::move(ral), std::move(*best)};
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

/// Removal quality against planted truth, over records that carry truth.
struct RemovalQuality {
  std::size_t removed = 0;
  std::size_t mislabeled = 0;
  std::size_t true_positive = 0;
  double precision() const { return removed == 0 ? 0.0 : static_cast<double>(true_positive) / static_cast<double>(removed); }
  double recall() const {
    return mislabeled == 0 ? 0.0 : static_cast<double>(true_positive) / static_cast<double>(mislabeled);
  }
};

inline RemovalQuality removal_quality(const Manifest& refined) {
  RemovalQuality q;
  for (const auto& r : refined.records) {
    if (!r.truth) continue;
    const bool bad = r.mislabeled();
    q.mislabeled += bad;
    if (!r.alive) {
      ++q.removed;
      q.true_positive += bad;
    }
  }
  return q;
}

inline void write_audit_jsonl(const std::vector<AuditEntry>& audit, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& a : audit) {
    nlohmann::ordered_json j;
    j["patch"] = a.patch;
    j["iteration"] = a.iteration;
    j["reason"] = reason_name(a.reason);
    j["confidence"] = a.confidence;
    os << j.dump() << '\n';
  }
}

inline std::vector<AuditEntry> read_audit_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<AuditEntry> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AuditEntry a;
      a.patch = j.at("patch").get<std::string>();
      a.iteration = j.at("iteration").get<int>();
      const auto reason = j.at("reason").get<std::string>();
      if (reason != "confidence" && reason != "group") throw ParseError("unknown reason " + reason, no);
      a.reason = reason == "confidence" ? RemovalReason::kConfidence : RemovalReason::kGroup;
      a.confidence = j.at("confidence").get<double>();
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("audit log: ") + e.what(), no);
    }
  }
  return out;
}

inline void write_history_csv(const std::vector<HistoryRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "iteration,set_size,val_aca\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%zu,%.6f\n", r.iteration, r.set_size, r.val_aca);
    os << buf;
  }
}

/// Checks removal soundness from an audit log alone: confidence entries are
/// below theta, group entries follow at least g confidence removals of the
/// same original, and no patch appears twice. Returns the first violation.
inline std::optional<std::string> audit_violation(const std::vector<AuditEntry>& audit, const RALConfig& cfg) {
  std::map<std::string, int> seen;
  std::map<std::int64_t, int> mx;
  // Entries are grouped by iteration, confidence pass first.
  for (const auto& a : audit) {
    if (++seen[a.patch] > 1) return "patch " + a.patch + " removed twice";
    const auto orig = std::stoll(a.patch.substr(1, a.patch.find('v') - 1));
    if (a.reason == RemovalReason::kConfidence) {
      if (!(a.confidence < cfg.theta)) return "patch " + a.patch + " removed for confidence at " + format_rate(a.confidence);
      ++mx[orig];
    } else if (mx[orig] < cfg.group_threshold) {
      return "patch " + a.patch + " group-removed with mx " + std::to_string(mx[orig]);
    }
  }
  return std::nullopt;
}

}  // namespace patchforge
