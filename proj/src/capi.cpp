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

#include "mmfuse.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include "mmfuse/image_ops.hpp"
#include "mmfuse/pipeline.hpp"

using namespace mmfuse;

struct mmf_config {
  ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error = "no error";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int fail(int code, const std::string& what) {
  g_last_error = what;
  return code;
}

// Maps exceptions from `fn` to status codes. MmfError carries user-facing
// wording already; the message decides IO vs argument classification.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return MMF_OK;
  } catch (const MmfError& e) {
    const std::string what = e.what();
    const bool io = what.find("cannot open") != std::string::npos ||
                    what.find("cannot write") != std::string::npos ||
                    what.find("write failed") != std::string::npos ||
                    what.find("truncated") != std::string::npos;
    return fail(io ? MMF_ERR_IO : MMF_ERR_INVALID_ARGUMENT, what);
  } catch (const std::exception& e) {
    return fail(MMF_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(MMF_ERR_RUNTIME, "unknown error");
  }
}

int require(bool ok, const char* what) {
  return ok ? MMF_OK : fail(MMF_ERR_INVALID_ARGUMENT, what);
}

}  // namespace

extern "C" {

const char* mmf_last_error(void) { return g_last_error.c_str(); }

void mmf_string_free(char* s) { std::free(s); }

int mmf_config_create_default(const char* task, mmf_config** out) {
  if (int rc = require(task && out, "task and out must be non-NULL")) return rc;
  return guarded([&] {
    TaskKind kind;
    if (std::string(task) == "mortality") {
      kind = TaskKind::kMortality;
    } else if (std::string(task) == "phenotyping") {
      kind = TaskKind::kPhenotyping;
    } else {
      throw MmfError("task must be 'mortality' or 'phenotyping'");
    }
    *out = new mmf_config{ExperimentConfig::defaults(kind)};
  });
}

int mmf_config_from_json(const char* json_text, mmf_config** out) {
  if (int rc = require(json_text && out, "json_text and out must be non-NULL"))
    return rc;
  return guarded(
      [&] { *out = new mmf_config{ExperimentConfig::from_json_string(json_text)}; });
}

int mmf_config_from_file(const char* path, mmf_config** out) {
  if (int rc = require(path && out, "path and out must be non-NULL")) return rc;
  return guarded(
      [&] { *out = new mmf_config{ExperimentConfig::from_json_file(path)}; });
}

void mmf_config_free(mmf_config* config) { delete config; }

int mmf_config_to_json(const mmf_config* config, char** out_json) {
  if (int rc = require(config && out_json, "config and out_json must be non-NULL"))
    return rc;
  return guarded([&] { *out_json = dup_string(config->cfg.to_json_string()); });
}

int mmf_config_hash(const mmf_config* config, char** out_hash) {
  if (int rc = require(config && out_hash, "config and out_hash must be non-NULL"))
    return rc;
  return guarded([&] { *out_hash = dup_string(config->cfg.config_hash()); });
}

int mmf_config_set_seed(mmf_config* config, uint64_t seed) {
  if (int rc = require(config != nullptr, "config must be non-NULL")) return rc;
  config->cfg.seed = seed;
  return MMF_OK;
}

int mmf_config_set_out_dir(mmf_config* config, const char* dir) {
  if (int rc = require(config && dir, "config and dir must be non-NULL")) return rc;
  config->cfg.out_dir = dir;
  return MMF_OK;
}

int mmf_config_set_dataset_dir(mmf_config* config, const char* dir) {
  if (int rc = require(config && dir, "config and dir must be non-NULL")) return rc;
  config->cfg.dataset_dir = dir;
  return MMF_OK;
}

int mmf_synth(const mmf_config* config, const char* out_dir) {
  if (int rc = require(config && out_dir, "config and out_dir must be non-NULL"))
    return rc;
  return guarded([&] {
    const ExperimentConfig& c = config->cfg;
    auto records = generate_cohort(c.cohort, c.seed);
    save_dataset(records, c.cohort.task, c.seed, out_dir);
  });
}

int mmf_run(const mmf_config* config, int phase, char** out_metrics_json) {
  if (int rc = require(config != nullptr, "config must be non-NULL")) return rc;
  if (int rc = require(phase >= MMF_PHASE_PRETRAIN && phase <= MMF_PHASE_EVALUATE,
                       "phase must be an MMF_PHASE_* value"))
    return rc;
  return guarded([&] {
    const RunPhase until = phase == MMF_PHASE_PRETRAIN  ? RunPhase::kPretrain
                           : phase == MMF_PHASE_FINETUNE ? RunPhase::kFinetune
                                                         : RunPhase::kEvaluate;
    RunArtifact artifact = run_experiment(config->cfg, until);
    if (out_metrics_json != nullptr) {
      *out_metrics_json = until == RunPhase::kEvaluate
                              ? dup_string(artifact.test_report.to_json_string())
                              : nullptr;
    }
  });
}

int mmf_ablate(const mmf_config* config, char** out_table) {
  if (int rc = require(config != nullptr, "config must be non-NULL")) return rc;
  return guarded([&] {
    AblationResult res = run_ablation(config->cfg);
    for (const auto& row : res.rows) {
      if (!row.ok) {
        g_last_error = "row '" + row.name + "' failed: " + row.error;
      }
    }
    if (out_table != nullptr) *out_table = dup_string(res.table_text);
  });
}

int mmf_robustness(const mmf_config* config, const double* p_values,
                   int n_p_values, int train_clean, int train_noisy,
                   char** out_table) {
  if (int rc = require(config && p_values, "config and p_values must be non-NULL"))
    return rc;
  if (int rc = require(n_p_values > 0, "n_p_values must be positive")) return rc;
  if (int rc = require(train_clean || train_noisy,
                       "at least one of train_clean / train_noisy"))
    return rc;
  return guarded([&] {
    std::vector<double> ps(p_values, p_values + n_p_values);
    RobustnessResult res = run_robustness(config->cfg, ps, train_clean != 0,
                                          train_noisy != 0);
    if (out_table != nullptr) *out_table = dup_string(res.table_text);
  });
}

int mmf_report(const char* metrics_json_path, const char* out_dir,
               const char* stem) {
  if (int rc = require(metrics_json_path && out_dir && stem,
                       "all arguments must be non-NULL"))
    return rc;
  return guarded([&] {
    std::ifstream is(metrics_json_path, std::ios::binary);
    if (!is) throw MmfError(std::string("cannot open ") + metrics_json_path);
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    emit_report_files(MetricsReport::from_json_string(text), out_dir, stem);
  });
}

int mmf_clahe_file(const char* input_pgm, const char* output_pgm,
                   int tile_rows, int tile_cols, double clip_limit) {
  if (int rc = require(input_pgm && output_pgm, "paths must be non-NULL"))
    return rc;
  return guarded([&] {
    ClaheParams params;
    params.tile_rows = tile_rows;
    params.tile_cols = tile_cols;
    params.clip_limit = clip_limit;
    write_pgm(clahe(read_pgm(input_pgm), params), output_pgm);
  });
}

}  // extern "C"
