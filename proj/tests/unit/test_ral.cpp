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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "patchforge/data/synth.hpp"
#include "patchforge/ral/ral.hpp"

namespace pf = patchforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "patchforge_ral_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// `n` originals, `j` variants each, labels cycling over 4 classes.
pf::Manifest synthetic_manifest(std::int64_t n, int j = 8) {
  pf::Manifest m;
  m.classes = {"a", "b", "c", "d"};
  for (std::int64_t i = 0; i < n; ++i)
    for (int v = 1; v <= j; ++v) {
      pf::PatchRecord r;
      r.orig_index = i;
      r.variant = v;
      r.id = pf::patch_id(i, v);
      r.slide = "slides/s.ppm";
      r.size = 32;
      r.label = static_cast<int>(i % 4);
      r.truth = (i % 5 == 0) ? (r.label + 1) % 4 : r.label;
      m.records.push_back(r);
    }
  m.sort_by_id();
  return m;
}

// Scores from a fixed table keyed by patch id; unknown ids get `fallback`.
pf::ScoreFn table_scorer(std::map<std::string, double> table, double fallback = 0.9) {
  return [table = std::move(table), fallback](const std::vector<pf::PatchRecord>& alive) {
    std::vector<double> out;
    for (const auto& r : alive) {
      auto it = table.find(r.id);
      out.push_back(it == table.end() ? fallback : it->second);
    }
    return out;
  };
}

// Seeded pseudo-random top probability per (patch, iteration-call).
pf::ScoreFn random_scorer(std::uint64_t seed, double lo = 0.25, double hi = 1.0) {
  auto calls = std::make_shared<int>(0);
  return [=](const std::vector<pf::PatchRecord>& alive) {
    pf::Rng rng(pf::mix_seed(seed, static_cast<std::uint64_t>((*calls)++)));
    std::vector<double> out;
    for (std::size_t i = 0; i < alive.size(); ++i) out.push_back(rng.uniform(lo, hi));
    return out;
  };
}

double top_prob(std::vector<double> p) { return *std::max_element(p.begin(), p.end()); }

}  // namespace

// ---------------------------------------------------------------------------
// Removal predicate and group rule.
// ---------------------------------------------------------------------------

TEST(RalPredicate, BelowThetaRemovedForConfidence) {
  pf::RALState s(synthetic_manifest(1));
  pf::RALConfig cfg;
  std::vector<double> conf(8, 0.9);
  conf[3] = top_prob({0.4, 0.3, 0.2, 0.1});
  const auto pass = pf::apply_removals(s, cfg, conf);
  EXPECT_EQ(pass.confidence_removed, 1u);
  EXPECT_EQ(pass.group_removed, 0u);
  ASSERT_EQ(s.audit.size(), 1u);
  EXPECT_EQ(s.audit[0].patch, pf::patch_id(0, 4));
  EXPECT_EQ(s.audit[0].reason, pf::RemovalReason::kConfidence);
  EXPECT_DOUBLE_EQ(s.audit[0].confidence, 0.4);
  EXPECT_EQ(s.mx[0], 1);
}

TEST(RalPredicate, ExactlyThetaIsKept) {
  pf::RALState s(synthetic_manifest(1));
  std::vector<double> conf(8, 0.9);
  conf[0] = top_prob({0.5, 0.3, 0.1, 0.1});
  pf::apply_removals(s, pf::RALConfig{}, conf);
  EXPECT_TRUE(s.audit.empty());
  EXPECT_EQ(s.manifest.alive_count(), 8u);
}

TEST(RalPredicate, ThetaZeroNeverRemoves) {
  pf::RALConfig cfg;
  cfg.theta = 0.0;
  cfg.max_iterations = 4;
  cfg.patience = 10;
  double aca = 0.5;
  auto out = pf::run_ral(synthetic_manifest(20), cfg, random_scorer(1, 0.0, 1.0), nullptr, [&] { return aca += 0.01; });
  ASSERT_EQ(out.history.size(), 5u);
  for (const auto& row : out.history) EXPECT_EQ(row.set_size, 160u);
  EXPECT_TRUE(out.audit.empty());
}

TEST(RalGroup, FourEarlierRemovalsCondemnTheRest) {
  pf::RALState s(synthetic_manifest(2));
  pf::RALConfig cfg;
  auto noop = [](const pf::Manifest&, int) {};
  // Iteration 1: variants 1-2 of original 0 fall below theta.
  pf::ral_iteration(s, cfg, table_scorer({{pf::patch_id(0, 1), 0.3}, {pf::patch_id(0, 2), 0.2}}), noop);
  EXPECT_EQ(s.mx[0], 2);
  EXPECT_EQ(s.manifest.alive_count(), 14u);
  // Iteration 2: two more, which brings mx to 4 and condemns the other four.
  pf::ral_iteration(s, cfg, table_scorer({{pf::patch_id(0, 3), 0.3}, {pf::patch_id(0, 4), 0.49}}), noop);
  EXPECT_EQ(s.mx[0], 4);
  std::set<std::string> group;
  for (const auto& a : s.audit)
    if (a.reason == pf::RemovalReason::kGroup) {
      group.insert(a.patch);
      EXPECT_EQ(a.iteration, 2);
    }
  EXPECT_EQ(group, (std::set<std::string>{pf::patch_id(0, 5), pf::patch_id(0, 6), pf::patch_id(0, 7),
                                          pf::patch_id(0, 8)}));
  EXPECT_EQ(s.manifest.alive_count(), 8u);
  EXPECT_EQ(s.mx[1], 0);
  EXPECT_EQ(s.t, 3);
}

TEST(RalGroup, ThreeRemovalsAreNotEnough) {
  pf::RALState s(synthetic_manifest(1));
  std::vector<double> conf{0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.9};
  const auto pass = pf::apply_removals(s, pf::RALConfig{}, conf);
  EXPECT_EQ(pass.group_removed, 0u);
  EXPECT_EQ(s.manifest.alive_count(), 5u);
}

TEST(RalGroup, ThresholdIsConfigurable) {
  pf::RALConfig cfg;
  cfg.group_threshold = 2;
  pf::RALState s(synthetic_manifest(1));
  std::vector<double> conf{0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9};
  EXPECT_EQ(pf::apply_removals(s, cfg, conf).group_removed, 6u);
  EXPECT_EQ(s.manifest.alive_count(), 0u);
}

TEST(RalConfig, Invariants) {
  pf::RALConfig c;
  EXPECT_NO_THROW(c.validate());
  c.theta = 1.0;
  EXPECT_THROW(c.validate(), pf::ContractError);
  c = {};
  c.group_threshold = 9;
  EXPECT_THROW(c.validate(), pf::ContractError);
  c = {};
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), pf::ContractError);
}

// ---------------------------------------------------------------------------
// Loop properties.
// ---------------------------------------------------------------------------

TEST(RalLoop, EmptySurvivorSetIsAnError) {
  pf::RALState s(synthetic_manifest(3));
  pf::RALConfig cfg;
  cfg.theta = 0.99;
  EXPECT_THROW(pf::ral_iteration(s, cfg, random_scorer(4, 0.1, 0.5), nullptr), pf::StateError);
}

TEST(RalLoop, MonotoneSetsCumulativeCountersSoundAudit) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    pf::RALState s(synthetic_manifest(40));
    pf::RALConfig cfg;
    auto scorer = random_scorer(seed, 0.45, 1.0);
    std::size_t prev = s.manifest.alive_count();
    auto prev_mx = s.mx;
    for (int t = 1; t <= 5; ++t) {
      pf::ral_iteration(s, cfg, scorer, nullptr);
      EXPECT_LE(s.manifest.alive_count(), prev);
      prev = s.manifest.alive_count();
      for (const auto& [i, c] : s.mx) EXPECT_GE(c, prev_mx.at(i));
      prev_mx = s.mx;
    }
    // Every removed record has exactly one audit entry.
    std::set<std::string> logged;
    for (const auto& a : s.audit) EXPECT_TRUE(logged.insert(a.patch).second);
    for (const auto& r : s.manifest.records) EXPECT_EQ(!r.alive, logged.count(r.id) == 1) << r.id;
    EXPECT_EQ(pf::audit_violation(s.audit, cfg), std::nullopt);
  }
}

TEST(RalLoop, AuditCheckerCatchesViolations) {
  pf::RALConfig cfg;
  std::vector<pf::AuditEntry> bad{{pf::patch_id(1, 1), 1, pf::RemovalReason::kConfidence, 0.6}};
  EXPECT_NE(pf::audit_violation(bad, cfg), std::nullopt);
  bad = {{pf::patch_id(1, 1), 1, pf::RemovalReason::kGroup, 0.9}};
  EXPECT_NE(pf::audit_violation(bad, cfg), std::nullopt);
  bad = {{pf::patch_id(1, 1), 1, pf::RemovalReason::kConfidence, 0.1},
         {pf::patch_id(1, 1), 2, pf::RemovalReason::kConfidence, 0.1}};
  EXPECT_NE(pf::audit_violation(bad, cfg), std::nullopt);
}

TEST(RalLoop, FrozenFixedPointIsIdempotent) {
  // A frozen scorer that depends only on the patch: once a pass removes
  // nothing, every later pass removes nothing too.
  auto frozen = [](const std::vector<pf::PatchRecord>& alive) {
    std::vector<double> out;
    for (const auto& r : alive) out.push_back(pf::Rng(pf::mix_seed(3, static_cast<std::uint64_t>(r.orig_index * 8 + r.variant))).uniform(0.2, 1.0));
    return out;
  };
  pf::RALState s(synthetic_manifest(30));
  pf::RALConfig cfg;
  int t = 0;
  while (pf::ral_iteration(s, cfg, frozen, nullptr).confidence_removed > 0 && ++t < 10) {
  }
  const auto audit = s.audit.size();
  const auto alive = s.manifest.alive_count();
  for (int k = 0; k < 3; ++k) {
    const auto pass = pf::ral_iteration(s, cfg, frozen, nullptr);
    EXPECT_EQ(pass.confidence_removed + pass.group_removed, 0u);
  }
  EXPECT_EQ(s.audit.size(), audit);
  EXPECT_EQ(s.manifest.alive_count(), alive);
}

TEST(RalLoop, SeededRunsReplayIdentically) {
  pf::RALConfig cfg;
  cfg.patience = 5;
  auto run = [&] {
    double aca = 0.4;
    return pf::run_ral(synthetic_manifest(25), cfg, random_scorer(17, 0.45, 1.0), nullptr, [&] { return aca += 0.02; });
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.audit, b.audit);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.best_manifest.records, b.best_manifest.records);
}

TEST(RalLoop, ReplaysTableShapedHistoryAndKeepsBest) {
  // Stub removing exactly enough patches to walk 89,600 -> 86,858 with the
  // recorded validation rates; the dip at K=4 stops the loop and K=3 wins.
  const std::vector<std::size_t> sizes{89600, 89026, 88170, 87363, 86858};
  const std::vector<double> acas{0.8916, 0.8958, 0.8971, 0.9281, 0.9214};
  int call = 0;
  std::set<std::int64_t> used;
  pf::ScoreFn scorer = [&](const std::vector<pf::PatchRecord>& alive) {
    const std::size_t drop = sizes[call] - sizes[call + 1];
    ++call;
    std::vector<double> out(alive.size(), 0.9);
    // Each original loses at most one variant overall, so no group rule fires.
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < alive.size() && dropped < drop; ++i)
      if (used.insert(alive[i].orig_index).second) {
        out[i] = 0.3;
        ++dropped;
      }
    return out;
  };
  int v = 0;
  pf::RALConfig cfg;
  std::vector<int> bests;
  const auto out = pf::run_ral(synthetic_manifest(11200), cfg, scorer, nullptr, [&] { return acas[v++]; },
                               [&](int it) { bests.push_back(it); });
  ASSERT_EQ(out.history.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(out.history[k].iteration, static_cast<int>(k));
    EXPECT_EQ(out.history[k].set_size, sizes[k]);
    EXPECT_DOUBLE_EQ(out.history[k].val_aca, acas[k]);
  }
  EXPECT_EQ(out.best_iteration, 3);
  EXPECT_EQ(out.best_manifest.alive_count(), 87363u);
  EXPECT_EQ(bests, (std::vector<int>{0, 1, 2, 3}));

  auto path = scratch("history") / "history.csv";
  pf::write_history_csv(out.history, path);
  std::ifstream is(path);
  std::string all((std::istreambuf_iterator<char>(is)), {});
  EXPECT_EQ(all,
            "iteration,set_size,val_aca\n0,89600,0.891600\n1,89026,0.895800\n2,88170,0.897100\n3,87363,0.928100\n"
            "4,86858,0.921400\n");
}

TEST(RalLoop, StopsAtMaxIterations) {
  pf::RALConfig cfg;
  cfg.max_iterations = 3;
  double aca = 0;
  const auto out = pf::run_ral(synthetic_manifest(10), cfg, random_scorer(2, 0.45, 1.0), nullptr, [&] { return aca += 0.1; });
  EXPECT_EQ(out.history.size(), 4u);
  EXPECT_EQ(out.best_iteration, 3);
}

TEST(RalLoop, MinImprovementGatesProgress) {
  pf::RALConfig cfg;
  cfg.min_improvement = 0.05;
  const std::vector<double> acas{0.5, 0.52, 0.9};
  int v = 0;
  const auto out = pf::run_ral(synthetic_manifest(10), cfg, random_scorer(2, 0.6, 1.0), nullptr, [&] { return acas[v++]; });
  EXPECT_EQ(out.history.size(), 2u);
  EXPECT_EQ(out.best_iteration, 0);
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

TEST(RalReports, AuditRoundTrip) {
  std::vector<pf::AuditEntry> audit{{pf::patch_id(4, 2), 1, pf::RemovalReason::kConfidence, 0.31},
                                    {pf::patch_id(4, 7), 1, pf::RemovalReason::kGroup, 0.88}};
  auto path = scratch("audit") / "audit.jsonl";
  pf::write_audit_jsonl(audit, path);
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  EXPECT_EQ(first, R"({"patch":"p00000004v2","iteration":1,"reason":"confidence","confidence":0.31})");
  EXPECT_EQ(pf::read_audit_jsonl(path), audit);
}

TEST(RalReports, RemovalQualityAgainstTruth) {
  auto m = synthetic_manifest(10);  // originals 0 and 5 are mislabeled
  for (auto& r : m.records)
    if (r.orig_index == 0 || (r.orig_index == 1 && r.variant <= 2)) r.alive = false;
  const auto q = pf::removal_quality(m);
  EXPECT_EQ(q.mislabeled, 16u);
  EXPECT_EQ(q.removed, 10u);
  EXPECT_EQ(q.true_positive, 8u);
  EXPECT_DOUBLE_EQ(q.precision(), 0.8);
  EXPECT_DOUBLE_EQ(q.recall(), 0.5);
}

// ---------------------------------------------------------------------------
// Model-backed run.
// ---------------------------------------------------------------------------

TEST(RalModel, ScoresAreSoftmaxAndReplayable) {
  pf::SynthConfig sc;
  sc.classes = 2;
  sc.slides_per_class = 2;
  sc.width = 96;
  sc.height = 64;
  sc.patch = 32;
  sc.rho = 0.25;
  sc.seed = 3;
  auto dir = scratch("model_run");
  auto corpus = pf::generate_synthetic_corpus(sc, dir);
  auto cache = std::make_shared<pf::SlideCache>(dir);
  pf::Manifest base = corpus.truth;
  base.records.resize(6);
  const auto d0 = pf::augment_manifest(base, pf::AugmentScheme::kRotMirror8);
  pf::PatchSet<float> val(cache, corpus.truth.records, pf::LabelSource::kTruth);

  pf::RALConfig cfg;
  cfg.max_iterations = 2;
  cfg.patience = 2;
  cfg.theta = 0.55;
  pf::RALTrainPlan plan;
  plan.fine_tune.epochs = 1;
  plan.fine_tune.batch = 8;
  plan.fine_tune.seed = 5;
  auto run = [&] {
    auto m = pf::build_refinenet<float>(3, 2);
    pf::init_parameters(m, 8);
    return pf::run_ral_model(d0, m, cache, cfg, plan, val);
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.ral.audit, b.ral.audit);
  EXPECT_EQ(a.ral.history, b.ral.history);
  EXPECT_EQ(a.best_model.mode(), pf::Mode::kEval);
  EXPECT_EQ(pf::audit_violation(a.ral.audit, cfg), std::nullopt);

  // The best model reproduces its recorded validation ACA.
  EXPECT_DOUBLE_EQ(pf::evaluate(a.best_model, val).aca, a.ral.best_aca);

  pf::PatchSet<float> some(cache, d0.records, pf::LabelSource::kAssigned);
  const auto s = pf::score(a.best_model, some);
  for (std::size_t i = 0; i < d0.records.size(); ++i) {
    double sum = 0;
    for (double p : s.prob_row(i)) {
      EXPECT_GE(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(RalModel, BatchedScoresMatchSinglePatchPasses) {
  pf::SynthConfig sc;
  sc.classes = 2;
  sc.slides_per_class = 1;
  sc.width = 64;
  sc.height = 64;
  sc.patch = 32;
  sc.seed = 9;
  auto dir = scratch("score_single");
  auto corpus = pf::generate_synthetic_corpus(sc, dir);
  auto cache = std::make_shared<pf::SlideCache>(dir);
  auto recs = corpus.truth.records;
  recs.push_back(recs[1]);  // duplicate patch
  pf::PatchSet<float> set(cache, recs, pf::LabelSource::kAssigned);
  auto m = pf::build_refinenet<float>(3, 2);
  pf::init_parameters(m, 2);
  m.set_mode(pf::Mode::kEval);
  const auto batched = pf::score(m, set, 16);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const std::vector<std::size_t> row{i};
    const auto single = m.forward(set.batch(row));
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(batched.logits[i * 2 + k], static_cast<double>(single[k]));
  }
  const auto last = recs.size() - 1;
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(batched.probs[1 * 2 + k], batched.probs[last * 2 + k]);
}
