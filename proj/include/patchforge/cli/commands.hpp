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

// Batch commands behind the `patchforge` tool. Each takes a plain options
// struct, validates every input path before doing work, and writes only
// under its output directory.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "patchforge/data/augment.hpp"
#include "patchforge/data/corpus.hpp"
#include "patchforge/data/dataset.hpp"
#include "patchforge/data/manifest.hpp"
#include "patchforge/data/synth.hpp"
#include "patchforge/model/checkpoint.hpp"
#include "patchforge/model/zoo.hpp"
#include "patchforge/ral/ral.hpp"
#include "patchforge/train/eval.hpp"
#include "patchforge/train/train.hpp"

namespace patchforge::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Exit codes and the one-line error report.
// ---------------------------------------------------------------------------

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kInvalidInput = 3,
  kMissingInput = 4,
  kSchema = 5,
  kIntegrity = 6,
  kDivergence = 7,
  kState = 8,
};

struct Failure {
  ExitCode code;
  const char* kind;
};

inline Failure classify(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return {kMissingInput, "missing_input"};
  if (dynamic_cast<const ParseError*>(&e)) return {kSchema, "schema"};
  if (dynamic_cast<const IntegrityError*>(&e)) return {kIntegrity, "integrity"};
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e))
    return {kDivergence, "divergence"};
  if (dynamic_cast<const StateError*>(&e)) return {kState, "state"};
  if (dynamic_cast<const InvalidInput*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const InvalidShape*>(&e))
    return {kInvalidInput, "invalid_input"};
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return {kSchema, "schema"};
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return {kMissingInput, "missing_input"};
  return {kInternal, "internal"};
}

/// {"error":kind,"exit":code,"command":...,"message":...} on one line.
inline std::string error_line(const std::string& command, const Failure& f, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = f.kind;
  j["exit"] = static_cast<int>(f.code);
  j["command"] = command;
  j["message"] = message;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Helpers.
// ---------------------------------------------------------------------------

inline void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw IoError(what + " path is required");
  if (!fs::is_regular_file(p)) throw IoError(what + " " + p.string() + " not found");
}

inline void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) throw IoError(what + " path is required");
  if (!fs::is_directory(p)) throw IoError(what + " " + p.string() + " not found");
}

inline fs::path prepare_out(const fs::path& out) {
  if (out.empty()) throw ContractError("--out is required");
  fs::create_directories(out);
  return out;
}

inline void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

enum class LabelChoice { kAuto, kAssigned, kTruth };

inline LabelChoice parse_label_choice(const std::string& s) {
  if (s == "auto") return LabelChoice::kAuto;
  if (s == "assigned") return LabelChoice::kAssigned;
  if (s == "truth") return LabelChoice::kTruth;
  throw InvalidInput("labels must be auto, assigned or truth, got '" + s + "'");
}

/// auto: ground truth when every record carries it, else assigned labels.
inline LabelSource resolve_labels(LabelChoice c, const std::vector<PatchRecord>& records) {
  if (c == LabelChoice::kAssigned) return LabelSource::kAssigned;
  if (c == LabelChoice::kTruth) return LabelSource::kTruth;
  for (const auto& r : records)
    if (!r.truth) return LabelSource::kAssigned;
  return records.empty() ? LabelSource::kAssigned : LabelSource::kTruth;
}

inline Manifest load_checked_manifest(const fs::path& manifest, const fs::path& corpus) {
  require_file(manifest, "manifest");
  require_dir(corpus, "corpus");
  auto m = read_manifest(manifest);
  validate_slides(m, corpus);
  return m;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
  SynthConfig config;
  fs::path out;
};

/// Corpus under `out` plus `out/truth.jsonl` (grid crop with ground truth).
inline void run_synth(const SynthOptions& o, std::ostream& log) {
  const auto out = prepare_out(o.out);
  const auto c = generate_synthetic_corpus(o.config, out);
  auto truth = c.truth;
  truth.provenance["corpus"] = o.out.string();
  write_manifest(truth, out / "truth.jsonl");
  std::size_t mislabeled = 0;
  for (const auto& r : truth.records) mislabeled += r.mislabeled();
  log << "synth: " << c.index.slides.size() << " slides, " << truth.records.size() << " grid patches, " << mislabeled
      << " mislabeled\n";
}

// ---------------------------------------------------------------------------
// crop / augment
// ---------------------------------------------------------------------------

struct CropCommand {
  fs::path corpus;
  CropOptions crop;
  fs::path out;
};

inline void run_crop(const CropCommand& o, std::ostream& log) {
  require_dir(o.corpus, "corpus");
  const auto index = read_corpus_index(o.corpus);
  const auto out = prepare_out(o.out);
  auto m = crop_corpus(index, o.corpus, o.crop);
  m.provenance["corpus"] = o.corpus.string();
  write_manifest(m, out / "manifest.jsonl");
  log << "crop: " << m.records.size() << " patches from " << index.slides.size() << " slides\n";
}

struct AugmentCommand {
  fs::path manifest;
  std::string scheme = "rot_mirror_8";
  fs::path out;
};

inline void run_augment(const AugmentCommand& o, std::ostream& log) {
  require_file(o.manifest, "manifest");
  const auto scheme = parse_augment_scheme(o.scheme);
  const auto in = read_manifest(o.manifest);
  const auto out = prepare_out(o.out);
  const auto m = augment_manifest(in, scheme);
  write_manifest(m, out / "manifest.jsonl");
  log << "augment: " << in.records.size() << " -> " << m.records.size() << " patches\n";
}

// ---------------------------------------------------------------------------
// Models.
// ---------------------------------------------------------------------------

struct ModelChoice {
  std::string arch = "refinenet";  // refinenet | adn
  fs::path arch_config;            // optional JSON overriding the defaults
  fs::path init_checkpoint;        // warm start instead of fresh weights
  std::uint64_t init_seed = 0;
};

inline nlohmann::json architecture_for(const ModelChoice& c, int classes) {
  nlohmann::json arch;
  if (!c.arch_config.empty()) {
    require_file(c.arch_config, "architecture config");
    std::ifstream is(c.arch_config);
    try {
      arch = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("architecture config " + c.arch_config.string() + ": " + e.what());
    }
    if (!arch.contains("type")) arch["type"] = c.arch;
  } else if (c.arch == "refinenet") {
    arch = RefineNetConfig{};
  } else if (c.arch == "adn") {
    arch = AdnConfig{};
  } else {
    throw InvalidInput("unknown architecture '" + c.arch + "' (refinenet or adn)");
  }
  arch["classes"] = classes;
  return arch;
}

inline ModelGraph<float> make_model(const ModelChoice& c, int classes) {
  if (!c.init_checkpoint.empty()) {
    require_file(c.init_checkpoint, "checkpoint");
    auto m = load_checkpoint<float>(c.init_checkpoint);
    if (m.classes() != classes)
      throw ContractError("checkpoint has " + std::to_string(m.classes()) + " classes, manifest has " +
                          std::to_string(classes));
    return m;
  }
  auto m = build_model<float>(architecture_for(c, classes));
  init_parameters(m, c.init_seed);
  return m;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCommand {
  fs::path corpus;
  fs::path manifest;
  ModelChoice model;
  TrainConfig train;
  std::string labels = "assigned";
  fs::path out;
};

inline void run_train(const TrainCommand& o, std::ostream& log) {
  const auto m = load_checked_manifest(o.manifest, o.corpus);
  o.train.validate();
  if (!o.model.init_checkpoint.empty()) require_file(o.model.init_checkpoint, "checkpoint");
  const auto out = prepare_out(o.out);
  auto records = m.alive_records();
  auto model = make_model(o.model, static_cast<int>(m.classes.size()));
  auto slides = std::make_shared<SlideCache>(o.corpus);
  PatchSet<float> set(slides, records, resolve_labels(parse_label_choice(o.labels), records));
  const auto result = train(model, set, o.train, [&](const EpochLog& e) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "epoch %d loss %.6f lr %g train_acc %.4f\n", e.epoch, e.loss, e.lr, e.accuracy);
    log << buf << std::flush;
  });
  model.set_mode(Mode::kEval);
  save_checkpoint(model, out / "model.ckpt");
  write_loss_csv(result, out / "loss.csv");
  nlohmann::ordered_json cfg;
  cfg["train"] = nlohmann::json(o.train);
  cfg["architecture"] = model.architecture();
  cfg["patches"] = records.size();
  write_json(cfg, out / "train_config.json");
}

// ---------------------------------------------------------------------------
// ral
// ---------------------------------------------------------------------------

struct RalCommand {
  fs::path corpus;
  fs::path manifest;      // augmented D_0
  fs::path checkpoint;    // M_0
  fs::path val_manifest;  // disjoint validation patches
  fs::path val_corpus;    // empty = same corpus as training
  std::string val_labels = "auto";
  RALConfig ral;
  TrainConfig fine_tune;  // per-iteration fine-tuning
  int score_batch = 16;
  fs::path out;
};

inline void run_ral_command(const RalCommand& o, std::ostream& log) {
  const auto d0 = load_checked_manifest(o.manifest, o.corpus);
  const bool same_corpus = o.val_corpus.empty() || fs::equivalent(o.val_corpus, o.corpus);
  const fs::path val_dir = same_corpus ? o.corpus : o.val_corpus;
  const auto val = load_checked_manifest(o.val_manifest, val_dir);
  require_file(o.checkpoint, "checkpoint");
  o.ral.validate();
  o.fine_tune.validate();
  if (val.classes != d0.classes) throw ContractError("validation and training manifests list different classes");
  if (same_corpus) {
    std::set<std::string> train_ids;
    for (const auto& r : d0.records) train_ids.insert(r.slide + "@" + std::to_string(r.x) + "," + std::to_string(r.y));
    for (const auto& r : val.records)
      if (train_ids.count(r.slide + "@" + std::to_string(r.x) + "," + std::to_string(r.y)))
        throw ContractError("validation patch " + r.id + " overlaps a training patch window");
  }
  const auto out = prepare_out(o.out);
  auto model = load_checkpoint<float>(o.checkpoint);
  auto slides = std::make_shared<SlideCache>(o.corpus);
  const auto vrec = val.alive_records();
  PatchSet<float> vset(same_corpus ? slides : std::make_shared<SlideCache>(val_dir), vrec, resolve_labels(parse_label_choice(o.val_labels), vrec));
  RALTrainPlan plan{o.fine_tune, o.score_batch};
  auto res = run_ral_model(d0, model, slides, o.ral, plan, vset, [&](const HistoryRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "ral: K=%d set_size=%zu val_aca=%.4f\n", r.iteration, r.set_size, r.val_aca);
    log << buf << std::flush;
  });
  write_manifest(res.ral.best_manifest, out / "refined.jsonl");
  save_checkpoint(res.best_model, out / "best.ckpt");
  write_history_csv(res.ral.history, out / "history.csv");
  write_audit_jsonl(res.ral.audit, out / "audit.jsonl");
  nlohmann::ordered_json summary;
  summary["best_iteration"] = res.ral.best_iteration;
  summary["best_val_aca"] = res.ral.best_aca;
  summary["initial_size"] = d0.alive_count();
  summary["refined_size"] = res.ral.best_manifest.alive_count();
  summary["ral"] = nlohmann::json(o.ral);
  summary["fine_tune"] = nlohmann::json(o.fine_tune);
  const auto q = removal_quality(res.ral.best_manifest);
  if (q.mislabeled + q.removed > 0) {
    summary["removal"] = {{"removed", q.removed},
                          {"mislabeled", q.mislabeled},
                          {"true_positive", q.true_positive},
                          {"precision", q.precision()},
                          {"recall", q.recall()}};
  }
  write_json(summary, out / "ral_summary.json");
}

// ---------------------------------------------------------------------------
// eval / predict-slide
// ---------------------------------------------------------------------------

struct EvalCommand {
  fs::path corpus;
  fs::path manifest;
  fs::path checkpoint;
  std::string labels = "auto";
  std::string split = "test";
  bool features = false;
  std::string feature_layer = "penultimate";
  int batch = 16;
  fs::path out;
};

inline EvalReport run_eval(const EvalCommand& o, std::ostream& log) {
  const auto m = load_checked_manifest(o.manifest, o.corpus);
  require_file(o.checkpoint, "checkpoint");
  const auto out = prepare_out(o.out);
  auto model = load_checkpoint<float>(o.checkpoint);
  if (model.classes() != static_cast<Dim>(m.classes.size()))
    throw ContractError("checkpoint and manifest disagree on the class count");
  const auto records = m.alive_records();
  PatchSet<float> set(std::make_shared<SlideCache>(o.corpus), records,
                      resolve_labels(parse_label_choice(o.labels), records));
  const auto report = evaluate(model, set, o.split, o.batch);
  write_json(report_to_json(report, m.classes), out / "report.json");
  write_class_aca_csv(report, m.classes, out / "class_aca.csv");
  write_confusion_csv(report.confusion, m.classes, out / "confusion.csv");
  if (o.features) write_features_csv(export_features(model, set, o.feature_layer, o.batch), out / "features.csv");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "eval: %zu patches, aca %.4f\n", report.samples, report.aca);
  log << buf;
  return report;
}

struct PredictCommand {
  fs::path corpus;
  fs::path manifest;
  fs::path checkpoint;
  int batch = 16;
  fs::path out;
};

/// slide_predictions.csv: slide,predicted,predicted_name,patches,slide_label
inline std::map<std::string, int> run_predict_slide(const PredictCommand& o, std::ostream& log) {
  const auto m = load_checked_manifest(o.manifest, o.corpus);
  require_file(o.checkpoint, "checkpoint");
  const auto out = prepare_out(o.out);
  auto model = load_checkpoint<float>(o.checkpoint);
  if (model.classes() != static_cast<Dim>(m.classes.size()))
    throw ContractError("checkpoint and manifest disagree on the class count");
  const auto records = m.alive_records();
  if (records.empty()) throw InvalidInput("manifest has no alive patches");
  PatchSet<float> set(std::make_shared<SlideCache>(o.corpus), records, LabelSource::kAssigned);
  const auto s = score(model, set, o.batch);
  std::vector<PatchPrediction> preds;
  std::map<std::string, std::pair<std::size_t, int>> per_slide;  // patches, assigned label
  for (std::size_t i = 0; i < records.size(); ++i) {
    preds.push_back({records[i].slide, s.predicted[i], s.prob_row(i)[static_cast<std::size_t>(s.predicted[i])]});
    auto& ps = per_slide[records[i].slide];
    ++ps.first;
    ps.second = records[i].label;
  }
  const auto fused = fuse_slice_vote(preds);
  std::ofstream os(out / "slide_predictions.csv", std::ios::trunc);
  if (!os) throw IoError("cannot write slide predictions");
  os << "slide,predicted,predicted_name,patches,slide_label\n";
  std::size_t correct = 0;
  for (const auto& [slide, label] : fused) {
    const auto& ps = per_slide[slide];
    os << slide << ',' << label << ',' << m.classes.at(static_cast<std::size_t>(label)) << ',' << ps.first << ','
       << ps.second << '\n';
    correct += label == ps.second;
  }
  log << "predict-slide: " << fused.size() << " slides, " << correct << " match their slide label\n";
  return fused;
}

}  // namespace patchforge::cli
