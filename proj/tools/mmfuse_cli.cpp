// Copyright 2026 The mmfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Command-line front end. Uses only the C interface in mmfuse.h.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "mmfuse.h"

namespace {

struct ConfigDeleter {
  void operator()(mmf_config* c) const { mmf_config_free(c); }
};
using ConfigPtr = std::unique_ptr<mmf_config, ConfigDeleter>;

struct StringDeleter {
  void operator()(char* s) const { mmf_string_free(s); }
};
using StringPtr = std::unique_ptr<char, StringDeleter>;

// Common options shared by every experiment-running subcommand.
struct CommonOpts {
  std::string config_path;
  std::string task = "mortality";
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "Experiment configuration JSON file");
  cmd->add_option("--task", opts.task,
                  "Task preset when no --config is given: mortality|phenotyping")
      ->check(CLI::IsMember({"mortality", "phenotyping"}));
  cmd->add_option("--out", opts.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", opts.seed, "Random seed (overrides the config)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

int die(const char* op) {
  std::fprintf(stderr, "%s: %s\n", op, mmf_last_error());
  return 1;
}

// Builds the config from --config / --task and applies overrides.
int make_config(const CommonOpts& opts, ConfigPtr& out) {
  mmf_config* raw = nullptr;
  int rc = opts.config_path.empty()
               ? mmf_config_create_default(opts.task.c_str(), &raw)
               : mmf_config_from_file(opts.config_path.c_str(), &raw);
  if (rc != MMF_OK) return rc;
  out.reset(raw);
  if (opts.seed_set) {
    if ((rc = mmf_config_set_seed(out.get(), opts.seed)) != MMF_OK) return rc;
  }
  if (!opts.out.empty()) {
    if ((rc = mmf_config_set_out_dir(out.get(), opts.out.c_str())) != MMF_OK) {
      return rc;
    }
  }
  return MMF_OK;
}

int run_phase(const CommonOpts& opts, int phase, const char* op) {
  ConfigPtr config;
  if (make_config(opts, config) != MMF_OK) return die(op);
  char* metrics = nullptr;
  if (mmf_run(config.get(), phase, &metrics) != MMF_OK) return die(op);
  StringPtr holder(metrics);
  if (metrics != nullptr) std::printf("%s\n", metrics);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal clinical time-series + image fusion toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_o, pre_o, fine_o, eval_o, abl_o, rob_o;
  std::string pre_modality = "both";

  CLI::App* synth = app.add_subcommand(
      "synth", "Generate the synthetic cohort as a dataset directory");
  add_common(synth, synth_o);

  CLI::App* pretrain = app.add_subcommand(
      "pretrain", "Pretrain the modality encoders");
  add_common(pretrain, pre_o);

  CLI::App* finetune = app.add_subcommand(
      "finetune", "Pretrain (or resume) then jointly fine-tune the fused model");
  add_common(finetune, fine_o);

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Full run; prints the test-set metrics JSON");
  add_common(evaluate, eval_o);

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run the seven-configuration comparison grid");
  add_common(ablate, abl_o);

  CLI::App* robustness = app.add_subcommand(
      "robustness", "Input-noise degradation grids for both fusion models");
  add_common(robustness, rob_o);
  std::vector<double> p_values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  bool no_clean = false, no_noisy = false;
  robustness->add_option("--p", p_values, "Noise fractions to sweep");
  robustness->add_flag("--no-train-clean", no_clean,
                       "Skip the train-clean/test-noisy grid");
  robustness->add_flag("--no-train-noisy", no_noisy,
                       "Skip the train-noisy/test-noisy grid");

  CLI::App* report = app.add_subcommand(
      "report", "Re-emit table files from a stored metrics JSON");
  std::string metrics_path, report_out = ".", stem = "metrics";
  report->add_option("--metrics", metrics_path, "Stored metrics JSON file")
      ->required();
  report->add_option("--out", report_out, "Output directory");
  report->add_option("--stem", stem, "Basename for the emitted files");

  CLI::App* clahe = app.add_subcommand(
      "clahe", "Adaptive histogram equalization on a PGM image");
  std::string clahe_in, clahe_out;
  int tile_rows = 8, tile_cols = 8;
  double clip_limit = 2.0;
  clahe->add_option("--in", clahe_in, "Input PGM (8-bit P5)")->required();
  clahe->add_option("--out", clahe_out, "Output PGM")->required();
  clahe->add_option("--tile-rows", tile_rows, "Tile grid rows");
  clahe->add_option("--tile-cols", tile_cols, "Tile grid columns");
  clahe->add_option("--clip", clip_limit, "Clip limit (multiples of uniform)");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    ConfigPtr config;
    if (make_config(synth_o, config) != MMF_OK) return die("synth");
    const std::string dir = synth_o.out.empty() ? "dataset" : synth_o.out;
    if (mmf_synth(config.get(), dir.c_str()) != MMF_OK) return die("synth");
    std::printf("wrote dataset to %s\n", dir.c_str());
    return 0;
  }
  if (pretrain->parsed()) {
    return run_phase(pre_o, MMF_PHASE_PRETRAIN, "pretrain");
  }
  if (finetune->parsed()) {
    return run_phase(fine_o, MMF_PHASE_FINETUNE, "finetune");
  }
  if (evaluate->parsed()) {
    return run_phase(eval_o, MMF_PHASE_EVALUATE, "evaluate");
  }
  if (ablate->parsed()) {
    ConfigPtr config;
    if (make_config(abl_o, config) != MMF_OK) return die("ablate");
    char* table = nullptr;
    if (mmf_ablate(config.get(), &table) != MMF_OK) return die("ablate");
    StringPtr holder(table);
    std::printf("%s", table);
    return 0;
  }
  if (robustness->parsed()) {
    ConfigPtr config;
    if (make_config(rob_o, config) != MMF_OK) return die("robustness");
    char* table = nullptr;
    if (mmf_robustness(config.get(), p_values.data(),
                       static_cast<int>(p_values.size()), !no_clean, !no_noisy,
                       &table) != MMF_OK) {
      return die("robustness");
    }
    StringPtr holder(table);
    std::printf("%s", table);
    return 0;
  }
  if (report->parsed()) {
    if (mmf_report(metrics_path.c_str(), report_out.c_str(), stem.c_str()) !=
        MMF_OK) {
      return die("report");
    }
    return 0;
  }
  if (clahe->parsed()) {
    if (mmf_clahe_file(clahe_in.c_str(), clahe_out.c_str(), tile_rows,
                       tile_cols, clip_limit) != MMF_OK) {
      return die("clahe");
    }
    return 0;
  }
  return 1;
}
