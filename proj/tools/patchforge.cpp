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

// patchforge <command> [flags]. A --config JSON file supplies defaults for
// any flag (keys are flag names, with '-' or '_'); flags on the command line
// win. Failures print one JSON line on stderr and exit nonzero.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "patchforge/cli/commands.hpp"
#include "patchforge/core/memory.hpp"

namespace pf = patchforge;
namespace cli = patchforge::cli;

namespace {

// Turns a JSON config into flag tokens. Nested objects are flattened, so
// {"train": {"lr": 0.1}} and {"lr": 0.1} both yield "--lr 0.1".
void config_tokens(const nlohmann::json& j, const CLI::App& sub, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    if (key == "command") continue;
    if (value.is_object()) {
      config_tokens(value, sub, out);
      continue;
    }
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const CLI::Option* opt = sub.get_option_no_throw("--" + flag);
    if (opt == nullptr) {
      std::cerr << "patchforge: config key '" << key << "' does not apply to " << sub.get_name() << ", ignored\n";
      continue;
    }
    if (value.is_boolean()) {
      if (opt->get_expected_min() == 0) {
        if (value.get<bool>()) out.push_back("--" + flag);
      } else {
        out.push_back("--" + flag);
        out.push_back(value.get<bool>() ? "true" : "false");
      }
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      out.push_back("--" + flag);
      out.push_back(joined);
    } else {
      out.push_back("--" + flag);
      out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
}

void add_train_flags(CLI::App* s, pf::TrainConfig& t) {
  s->add_option("--batch", t.batch, "mini-batch size")->capture_default_str();
  s->add_option("--lr", t.lr, "initial learning rate")->capture_default_str();
  s->add_option("--lr-second", t.lr_second, "rate after the first milestone")->capture_default_str();
  s->add_option("--lr-decay", t.lr_decay, "factor applied at each later milestone")->capture_default_str();
  s->add_option("--milestones", t.milestones, "milestone epochs (default: thirds)")->delimiter(',');
  s->add_option("--momentum", t.momentum)->capture_default_str();
  s->add_option("--epochs", t.epochs)->capture_default_str();
  s->add_option("--precision", t.precision)->capture_default_str();
}

void add_model_flags(CLI::App* s, cli::ModelChoice& m) {
  s->add_option("--arch", m.arch, "refinenet or adn")->capture_default_str();
  s->add_option("--arch-config", m.arch_config, "architecture JSON");
  s->add_option("--init-checkpoint", m.init_checkpoint, "warm-start checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  pf::tune_allocator();
  CLI::App app{"patchforge: patch corpora, noisy-label refinement and patch classifiers"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON file with flag defaults");
    s->add_option("--seed", seed, "seed for every stochastic step")->each([&](const std::string&) { seed_given = true; });
    s->add_option("--out", out, "output directory")->required();
  };

  cli::SynthOptions synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic noisy-label corpus");
  common(s_synth);
  s_synth->add_option("--classes", synth.config.classes)->capture_default_str();
  s_synth->add_option("--slides-per-class", synth.config.slides_per_class)->capture_default_str();
  s_synth->add_option("--width", synth.config.width)->capture_default_str();
  s_synth->add_option("--height", synth.config.height)->capture_default_str();
  s_synth->add_option("--patch", synth.config.patch)->capture_default_str();
  s_synth->add_option("--overlap", synth.config.overlap)->capture_default_str();
  s_synth->add_option("--rho", synth.config.rho, "target normal-region fraction")->capture_default_str();
  s_synth->add_option("--noise-sd", synth.config.noise_sd)->capture_default_str();

  cli::CropCommand crop;
  std::string crop_mode = "grid";
  auto* s_crop = app.add_subcommand("crop", "crop slides into a patch manifest");
  common(s_crop);
  s_crop->add_option("--corpus", crop.corpus)->required();
  s_crop->add_option("--patch", crop.crop.patch)->capture_default_str();
  s_crop->add_option("--overlap", crop.crop.overlap)->capture_default_str();
  s_crop->add_option("--mode", crop_mode, "grid or random")->capture_default_str();
  s_crop->add_flag("--roi", crop.crop.roi, "keep only Otsu-foreground windows");
  s_crop->add_option("--min-foreground", crop.crop.min_foreground)->capture_default_str();
  s_crop->add_option("--per-slide", crop.crop.random_per_slide, "random mode: windows per slide");

  cli::AugmentCommand augment;
  auto* s_aug = app.add_subcommand("augment", "expand a manifest with rotation/mirror variants");
  common(s_aug);
  s_aug->add_option("--manifest", augment.manifest)->required();
  s_aug->add_option("--scheme", augment.scheme, "rot_mirror_8 or rot_4")->capture_default_str();

  cli::TrainCommand train;
  auto* s_train = app.add_subcommand("train", "train a classifier on the alive patches of a manifest");
  common(s_train);
  s_train->add_option("--corpus", train.corpus)->required();
  s_train->add_option("--manifest", train.manifest)->required();
  s_train->add_option("--labels", train.labels, "assigned, truth or auto")->capture_default_str();
  add_model_flags(s_train, train.model);
  add_train_flags(s_train, train.train);

  cli::RalCommand ral;
  ral.fine_tune.epochs = 10;
  auto* s_ral = app.add_subcommand("ral", "reversed active learning over an augmented manifest");
  common(s_ral);
  s_ral->add_option("--corpus", ral.corpus)->required();
  s_ral->add_option("--manifest", ral.manifest, "augmented training manifest")->required();
  s_ral->add_option("--checkpoint", ral.checkpoint, "pre-trained model")->required();
  s_ral->add_option("--val-manifest", ral.val_manifest)->required();
  s_ral->add_option("--val-corpus", ral.val_corpus, "corpus of the validation manifest (default: --corpus)");
  s_ral->add_option("--val-labels", ral.val_labels)->capture_default_str();
  s_ral->add_option("--theta", ral.ral.theta)->capture_default_str();
  s_ral->add_option("--group-threshold", ral.ral.group_threshold)->capture_default_str();
  s_ral->add_option("--max-iterations", ral.ral.max_iterations)->capture_default_str();
  s_ral->add_option("--patience", ral.ral.patience)->capture_default_str();
  s_ral->add_option("--min-improvement", ral.ral.min_improvement)->capture_default_str();
  s_ral->add_option("--variants", ral.ral.variants)->capture_default_str();
  s_ral->add_option("--score-batch", ral.score_batch)->capture_default_str();
  add_train_flags(s_ral, ral.fine_tune);

  cli::EvalCommand eval;
  auto* s_eval = app.add_subcommand("eval", "patch-level evaluation report");
  common(s_eval);
  s_eval->add_option("--corpus", eval.corpus)->required();
  s_eval->add_option("--manifest", eval.manifest)->required();
  s_eval->add_option("--checkpoint", eval.checkpoint)->required();
  s_eval->add_option("--labels", eval.labels)->capture_default_str();
  s_eval->add_option("--split", eval.split)->capture_default_str();
  s_eval->add_flag("--features", eval.features, "also write features.csv");
  s_eval->add_option("--feature-layer", eval.feature_layer)->capture_default_str();
  s_eval->add_option("--batch", eval.batch)->capture_default_str();

  cli::PredictCommand predict;
  auto* s_pred = app.add_subcommand("predict-slide", "slide labels by voting over patch predictions");
  common(s_pred);
  s_pred->add_option("--corpus", predict.corpus)->required();
  s_pred->add_option("--manifest", predict.manifest)->required();
  s_pred->add_option("--checkpoint", predict.checkpoint)->required();
  s_pred->add_option("--batch", predict.batch)->capture_default_str();

  std::string command = argc > 1 ? argv[1] : "";
  try {
    // First pass finds --config; the second re-parses with the config's
    // tokens ahead of the user's, so TakeLast lets flags win.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (!config_path.empty() && !args.empty()) {
      cli::require_file(config_path, "config");
      std::ifstream is(config_path);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw pf::ParseError("config " + config_path + ": " + e.what());
      }
      const CLI::App* sub = nullptr;
      for (const auto* s : app.get_subcommands([](CLI::App*) { return true; }))
        if (s->get_name() == args[0]) sub = s;
      if (sub != nullptr) {
        std::vector<std::string> tokens;
        config_tokens(j, *sub, tokens);
        args.insert(args.begin() + 1, tokens.begin(), tokens.end());
      }
    }
    std::vector<char*> cargs{argv[0]};
    for (auto& a : args) cargs.push_back(a.data());
    try {
      app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << cli::error_line(command, {cli::kUsage, "usage"}, e.what()) << '\n';
      return static_cast<int>(cli::kUsage);
    }

    auto needs_seed = [&](const char* what) {
      if (!seed_given) throw pf::ContractError(std::string(what) + " is stochastic; --seed is required");
    };
    std::ostream& log = std::cerr;
    if (s_synth->parsed()) {
      needs_seed("synth");
      synth.config.seed = seed;
      synth.out = out;
      cli::run_synth(synth, log);
    } else if (s_crop->parsed()) {
      if (crop_mode == "grid") {
        crop.crop.mode = pf::CropMode::kGrid;
      } else if (crop_mode == "random") {
        crop.crop.mode = pf::CropMode::kRandom;
        needs_seed("crop --mode random");
        crop.crop.seed = seed;
      } else {
        throw pf::InvalidInput("crop mode must be grid or random");
      }
      crop.out = out;
      cli::run_crop(crop, log);
    } else if (s_aug->parsed()) {
      augment.out = out;
      cli::run_augment(augment, log);
    } else if (s_train->parsed()) {
      needs_seed("train");
      train.train.seed = seed;
      train.model.init_seed = seed;
      train.out = out;
      cli::run_train(train, log);
    } else if (s_ral->parsed()) {
      needs_seed("ral");
      ral.fine_tune.seed = seed;
      ral.out = out;
      cli::run_ral_command(ral, log);
    } else if (s_eval->parsed()) {
      eval.out = out;
      cli::run_eval(eval, log);
    } else if (s_pred->parsed()) {
      predict.out = out;
      cli::run_predict_slide(predict, log);
    }
  } catch (const std::exception& e) {
    const auto f = cli::classify(e);
    std::cerr << cli::error_line(command, f, e.what()) << '\n';
    return static_cast<int>(f.code);
  }
  return 0;
}
