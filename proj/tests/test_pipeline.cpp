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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mmfuse/pipeline.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mmf_pipe_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

// A configuration small enough that a full pretrain+finetune run takes
// seconds: 16x16 images, 8h episodes (4 bins), width-1 backbone.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.seed = 5;
  c.cohort.n_patients = 40;
  c.cohort.pairing_rate = 0.8;
  c.split_ratios = {0.6, 0.2, 0.2};
  c.cohort.duration_hours = 8;
  c.cohort.image_size = 16;
  c.cohort.second_episode_prob = 0;
  c.preprocess.use_clahe = false;
  c.preprocess.augment.resize = 16;
  c.preprocess.augment.crop = 16;
  c.preprocess.eval_resize = 16;
  c.preprocess.eval_crop = 16;
  c.ehr = {.layers = 1, .hidden = 4, .dropout = 0.0};
  c.img = {.base_channels = 1};
  c.fusion = {.kind = FusionKind::kAttention, .layers = 1, .heads = 2,
              .ff_dim = 8};
  c.pretrain_ehr_hyper = {.lr = 1e-2, .epochs = 1, .batch_size = 8};
  c.pretrain_img_hyper = {.lr = 1e-2, .epochs = 1, .batch_size = 8};
  c.finetune_hyper = {.lr = 1e-3, .epochs = 1, .batch_size = 8};
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("config JSON round trip preserves every field") {
  ExperimentConfig c = ExperimentConfig::defaults(TaskKind::kPhenotyping);
  c.seed = 99;
  c.cohort.n_patients = 123;
  c.cohort.label_flip_rates = {0.05, 0.2, 0.4};
  c.fusion.kind = FusionKind::kLstm;
  c.loss_mode = LossMode::kUncertainty;
  c.preprocess.use_clahe = false;
  c.split_ratios = {0.6, 0.2, 0.2};
  c.finetune_hyper.lr = 1.25e-4;
  c.out_dir = "runs/x";
  c.cache_dir = "runs/cache";
  ExperimentConfig d = ExperimentConfig::from_json_string(c.to_json_string());
  CHECK(d.to_json_string() == c.to_json_string());
  CHECK(d.config_hash() == c.config_hash());
  CHECK(d.seed == 99);
  CHECK(d.cohort.task.num_labels == 25);
  CHECK(d.fusion.kind == FusionKind::kLstm);
  CHECK(d.loss_mode == LossMode::kUncertainty);
  CHECK(d.cohort.label_flip_rates == std::vector<double>{0.05, 0.2, 0.4});
}

TEST_CASE("task-specific defaults carry the documented learning rates") {
  ExperimentConfig ph = ExperimentConfig::defaults(TaskKind::kPhenotyping);
  CHECK(ph.pretrain_ehr_hyper.lr == 1e-4);
  CHECK(ph.pretrain_img_hyper.lr == 5e-4);
  CHECK(ph.finetune_hyper.lr == 7e-5);
  CHECK(ph.cohort.task.num_labels == 25);
  ExperimentConfig mo = ExperimentConfig::defaults(TaskKind::kMortality);
  CHECK(mo.pretrain_ehr_hyper.lr == 3e-5);
  CHECK(mo.finetune_hyper.lr == 1e-4);
  CHECK(mo.cohort.task.num_labels == 1);
}

TEST_CASE("validation errors name the offending field") {
  ExperimentConfig c = ExperimentConfig::defaults(TaskKind::kMortality);
  SUBCASE("negative lr") {
    c.finetune_hyper.lr = -1;
    CHECK_THROWS_WITH_AS(c.validate(),
                         doctest::Contains("finetune.lr"), MmfError);
  }
  SUBCASE("ratios do not sum to one") {
    c.split_ratios = {0.5, 0.5, 0.5};
    CHECK_THROWS_WITH_AS(c.validate(),
                         doctest::Contains("split_ratios"), MmfError);
  }
  SUBCASE("heads must divide hidden") {
    c.ehr.hidden = 10;
    c.fusion.heads = 4;
    CHECK_THROWS_WITH_AS(c.validate(),
                         doctest::Contains("fusion.heads"), MmfError);
  }
  SUBCASE("crop larger than resize") {
    c.preprocess.eval_crop = 300;
    CHECK_THROWS_WITH_AS(c.validate(),
                         doctest::Contains("eval_crop"), MmfError);
  }
  SUBCASE("unknown JSON field") {
    CHECK_THROWS_WITH_AS(
        ExperimentConfig::from_json_string("{\"sead\": 3}"),
        doctest::Contains("sead"), MmfError);
  }
  SUBCASE("unknown fusion kind") {
    CHECK_THROWS_WITH_AS(
        ExperimentConfig::from_json_string("{\"fusion\": {\"kind\": \"mlp\"}}"),
        doctest::Contains("fusion.kind"), MmfError);
  }
}

TEST_CASE("config hash ignores output locations but not behavior") {
  ExperimentConfig a = ExperimentConfig::defaults(TaskKind::kMortality);
  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  b.cache_dir = "elsewhere/cache";
  CHECK(a.config_hash() == b.config_hash());
  b.seed = a.seed + 1;
  CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("run_experiment emits artifacts and is deterministic across dirs") {
  TempDir tmp;
  ExperimentConfig a = tiny_config(tmp.path / "a");
  ExperimentConfig b = tiny_config(tmp.path / "b");
  RunArtifact ra = run_experiment(a);
  RunArtifact rb = run_experiment(b);

  for (const char* f : {"config.json", "state.json", "pretrain_ehr.ckpt",
                        "pretrain_img.ckpt", "finetune.ckpt", "metrics.json",
                        "metrics.csv", "metrics.txt"}) {
    CHECK(fs::exists(tmp.path / "a" / f));
  }
  CHECK(ra.config_hash == rb.config_hash);
  // Same config, different out_dir: byte-identical metrics.
  CHECK(slurp(tmp.path / "a" / "metrics.json") ==
        slurp(tmp.path / "b" / "metrics.json"));
  CHECK(ra.test_report.n_samples > 0);

  SUBCASE("re-running in place resumes from checkpoints, metrics unchanged") {
    const std::string before = slurp(tmp.path / "a" / "metrics.json");
    RunArtifact again = run_experiment(a);
    CHECK(slurp(tmp.path / "a" / "metrics.json") == before);
    // Resumed phases report no fresh training epochs.
    CHECK(again.finetune_result.train_loss_per_epoch.empty());
  }

  SUBCASE("re-emitting report files is byte-identical") {
    const std::string before_json = slurp(tmp.path / "a" / "metrics.json");
    const std::string before_csv = slurp(tmp.path / "a" / "metrics.csv");
    emit_report_files(ra.test_report, (tmp.path / "a").string(), "metrics");
    CHECK(slurp(tmp.path / "a" / "metrics.json") == before_json);
    CHECK(slurp(tmp.path / "a" / "metrics.csv") == before_csv);
  }
}

TEST_CASE("unimodal runs skip the unused pipeline entirely") {
  TempDir tmp;
  ExperimentConfig c = tiny_config(tmp.path / "ehr_only");
  c.fusion.kind = FusionKind::kEhrOnly;
  run_experiment(c);
  CHECK(fs::exists(tmp.path / "ehr_only" / "pretrain_ehr.ckpt"));
  CHECK_FALSE(fs::exists(tmp.path / "ehr_only" / "pretrain_img.ckpt"));

  ExperimentConfig i = tiny_config(tmp.path / "img_only");
  i.fusion.kind = FusionKind::kImgOnly;
  run_experiment(i);
  CHECK(fs::exists(tmp.path / "img_only" / "pretrain_img.ckpt"));
  CHECK_FALSE(fs::exists(tmp.path / "img_only" / "pretrain_ehr.ckpt"));
}

TEST_CASE("encoder cache reuses pretrained weights across configurations") {
  TempDir tmp;
  ExperimentConfig a = tiny_config(tmp.path / "a");
  a.cache_dir = (tmp.path / "cache").string();
  run_experiment(a);
  // Same data + encoders, different fusion head: both encoders cache-hit, so
  // the second run's pretraining phases report no epochs.
  ExperimentConfig b = tiny_config(tmp.path / "b");
  b.cache_dir = a.cache_dir;
  b.fusion.kind = FusionKind::kLstm;
  RunArtifact rb = run_experiment(b);
  CHECK(rb.pretrain_ehr_result.train_loss_per_epoch.empty());
  CHECK(rb.pretrain_img_result.train_loss_per_epoch.empty());
  CHECK(rb.finetune_result.train_loss_per_epoch.size() == 1);
  // A different encoder width must miss the cache.
  ExperimentConfig c = tiny_config(tmp.path / "c");
  c.cache_dir = a.cache_dir;
  c.ehr.hidden = 8;
  RunArtifact rc = run_experiment(c);
  CHECK(rc.pretrain_ehr_result.train_loss_per_epoch.size() == 1);
}

TEST_CASE("stale state from a different config is ignored") {
  TempDir tmp;
  ExperimentConfig a = tiny_config(tmp.path / "a");
  run_experiment(a);
  ExperimentConfig b = tiny_config(tmp.path / "a");  // same dir, new config
  b.seed = 6;
  RunArtifact rb = run_experiment(b);
  // The changed seed invalidates the stored phases; training re-runs.
  CHECK(rb.finetune_result.train_loss_per_epoch.size() == 1);
}

TEST_CASE("ablation runs all seven rows against shared encoders") {
  TempDir tmp;
  ExperimentConfig base = tiny_config(tmp.path / "abl");
  AblationResult res = run_ablation(base);
  REQUIRE(res.rows.size() == 7);
  for (const auto& row : res.rows) {
    INFO(row.name << ": " << row.error);
    CHECK(row.ok);
  }
  CHECK(res.rows[0].name == "Time series only");
  CHECK(res.rows[6].name == "Attention + Uncertainty + CLAHE");
  CHECK(fs::exists(tmp.path / "abl" / "ablation.txt"));
  CHECK(fs::exists(tmp.path / "abl" / "ablation.csv"));
  CHECK(fs::exists(tmp.path / "abl" / "uncertainty_per_task.csv"));
  // Header + 7 data lines.
  CHECK(std::count(res.table_csv.begin(), res.table_csv.end(), '\n') == 8);
  CHECK(res.table_text.find("MacroAvgF1") != std::string::npos);
  // Rows sharing (data, encoder config, pretraining hyper) reused the cache:
  // rows 3 and 4 differ only in loss mode, so row 4 skipped pretraining.
  CHECK(fs::exists(tmp.path / "abl" / "cache"));
}

TEST_CASE("robustness grid covers both models, both modes, all p") {
  TempDir tmp;
  ExperimentConfig base = tiny_config(tmp.path / "rob");
  RobustnessResult res = run_robustness(base, {0.0, 0.3}, true, true);
  // 2 models x 2 modes x 2 p-values.
  REQUIRE(res.cells.size() == 8);
  int clean_zero = 0;
  for (const auto& cell : res.cells) {
    CHECK((cell.model == "attention" || cell.model == "lstm_fusion"));
    CHECK((cell.mode == "train_clean" || cell.mode == "train_noisy"));
    if (cell.mode == "train_clean" && cell.p == 0.0) ++clean_zero;
  }
  CHECK(clean_zero == 2);
  // The p = 0 control of the clean-trained model equals the clean run's own
  // metrics byte-for-byte.
  const std::string control = slurp(
      tmp.path / "rob" / "cells" / "attention_train_clean_p00.json");
  const std::string clean =
      slurp(tmp.path / "rob" / "attention_clean" / "metrics.json");
  CHECK(control == clean);
  CHECK(res.table_csv.find("attention,train_clean,0,") != std::string::npos);
  CHECK(res.table_text.find("Noise%") != std::string::npos);
  CHECK(fs::exists(tmp.path / "rob" / "robustness.svg"));
  CHECK(res.svg.find("<svg") == 0);
  CHECK(res.svg.find("polyline") != std::string::npos);
}

TEST_CASE("line SVG renders a labeled curve per series") {
  std::string svg = render_line_svg(
      {{"a", {{0.0, 0.5}, {0.5, 0.4}}}, {"b", {{0.0, 0.6}, {0.5, 0.3}}}},
      "x", "y");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find(">a</text>") != std::string::npos);
  CHECK(svg.find(">b</text>") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
}
