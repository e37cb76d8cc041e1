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
// Experiment orchestration: JSON experiment configs, the pretrain -> finetune
// schedule, the ablation grid, the noise-robustness grids, and report files.

#ifndef MMFUSE_PIPELINE_HPP_
#define MMFUSE_PIPELINE_HPP_

#include <array>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/robustness.hpp"

namespace mmfuse {

struct ExperimentConfig {
  // Data: load from dataset_dir when set, otherwise synthesize `cohort`.
  std::string dataset_dir;
  CohortConfig cohort;
  std::array<double, 3> split_ratios = {0.7, 0.1, 0.2};
  uint64_t seed = 0;

  PreprocessConfig preprocess;
  EhrEncoderConfig ehr;
  ImgEncoderConfig img;
  FusionConfig fusion;
  LossMode loss_mode = LossMode::kBce;

  TrainHyper pretrain_ehr_hyper{.lr = 1e-4, .epochs = 20};
  TrainHyper pretrain_img_hyper{.lr = 5e-4, .epochs = 20};
  TrainHyper finetune_hyper{.lr = 7e-5, .epochs = 20};

  std::string out_dir = "runs/experiment";
  // Optional directory for pretrained-encoder reuse across configurations
  // that share the same data + encoder settings (ablation rows).
  std::string cache_dir;

  // Full-scale learning-rate defaults per task; everything else unchanged.
  static ExperimentConfig defaults(TaskKind kind);
  // The identity of a run: hash over every field that affects emitted
  // numbers (out_dir and cache_dir excluded).
  std::string config_hash() const;
  void validate() const;  // throws MmfError naming the offending field

  std::string to_json_string() const;
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
};

struct RunArtifact {
  std::string config_hash;
  MetricsReport test_report;
  TrainResult pretrain_ehr_result, pretrain_img_result, finetune_result;
  std::string checkpoint_path;
  std::string metrics_json_path;
  double wall_clock_s = 0;
};

// How far run_experiment goes; later invocations resume past finished phases.
enum class RunPhase { kPretrain, kFinetune, kEvaluate };

// synth/load -> split -> standardize -> pretrain -> finetune -> evaluate.
// Emits config.json, model.ckpt, metrics.{json,csv,txt} under out_dir and
// keeps a state file so an interrupted run resumes after completed phases.
RunArtifact run_experiment(const ExperimentConfig& config,
                           RunPhase until = RunPhase::kEvaluate);

struct AblationRow {
  std::string name;
  bool ok = false;
  std::string error;  // when !ok
  MetricsReport report;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // the 7 configuration rows
  std::string table_text;        // four metric columns
  std::string table_csv;
};

// Runs the seven configuration rows (series only, image only, recurrent
// fusion, attention, attention+uncertainty, attention+CLAHE,
// attention+uncertainty+CLAHE). Also writes a per-task comparison file for
// the uncertainty vs no-uncertainty pair. Row failures leave explicit gaps.
AblationResult run_ablation(const ExperimentConfig& base);

struct RobustnessCell {
  std::string model;  // "attention" | "lstm_fusion"
  std::string mode;   // "train_clean" | "train_noisy"
  double p = 0;
  MetricsReport report;
};

struct RobustnessResult {
  std::vector<RobustnessCell> cells;
  std::string table_text;  // noise-table layout per mode
  std::string table_csv;
  std::string svg;         // degradation curves
};

// The noise grids over both fusion models. p_values defaults to the control
// row 0 plus 0.1..0.6.
RobustnessResult run_robustness(const ExperimentConfig& base,
                                const std::vector<double>& p_values,
                                bool train_clean, bool train_noisy);

// Re-emits report files (JSON/CSV/text) from a stored metrics JSON;
// deterministic, so re-emission is byte-identical.
void emit_report_files(const MetricsReport& report, const std::string& out_dir,
                       const std::string& stem);

// Minimal polyline plot; one series per curve, labeled.
std::string render_line_svg(
    const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
        curves,
    const std::string& x_label, const std::string& y_label);

}  // namespace mmfuse

#endif  // MMFUSE_PIPELINE_HPP_
