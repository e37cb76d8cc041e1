/* Copyright 2026 The mmfuse Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * C interface of the multimodal fusion library. All functions return an
 * MMF_* status code; on failure mmf_last_error() describes the most recent
 * error of the calling thread. Strings returned through out-parameters are
 * heap-allocated and must be released with mmf_string_free().
 */

#ifndef MMFUSE_H_
#define MMFUSE_H_

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  MMF_OK = 0,
  MMF_ERR_INVALID_ARGUMENT = 1, /* bad handle, bad field, bad JSON */
  MMF_ERR_IO = 2,               /* file missing, unreadable, unwritable */
  MMF_ERR_RUNTIME = 3           /* anything else that went wrong */
};

enum {
  MMF_PHASE_PRETRAIN = 0, /* stop after encoder pretraining */
  MMF_PHASE_FINETUNE = 1, /* stop after joint fine-tuning */
  MMF_PHASE_EVALUATE = 2  /* full run incl. test-set metrics */
};

/* Opaque experiment configuration. */
typedef struct mmf_config mmf_config;

/* Description of the last failure on this thread; never NULL. */
const char* mmf_last_error(void);

/* Frees a string returned through any char** out-parameter. NULL is a no-op. */
void mmf_string_free(char* s);

/* --- Configuration ------------------------------------------------------ */

/* task: "mortality" or "phenotyping". */
int mmf_config_create_default(const char* task, mmf_config** out);
int mmf_config_from_json(const char* json_text, mmf_config** out);
int mmf_config_from_file(const char* path, mmf_config** out);
void mmf_config_free(mmf_config* config);

int mmf_config_to_json(const mmf_config* config, char** out_json);
/* 16-hex-digit identity over every behavior-affecting field. */
int mmf_config_hash(const mmf_config* config, char** out_hash);
int mmf_config_set_seed(mmf_config* config, uint64_t seed);
int mmf_config_set_out_dir(mmf_config* config, const char* dir);
int mmf_config_set_dataset_dir(mmf_config* config, const char* dir);

/* --- Operations --------------------------------------------------------- */

/* Generates the configured synthetic cohort and writes it as a dataset
 * directory (manifest + per-episode series CSVs and PGM images). */
int mmf_synth(const mmf_config* config, const char* out_dir);

/* Runs the experiment up to `phase` (MMF_PHASE_*), resuming past phases
 * already completed under the same configuration in out_dir. For
 * MMF_PHASE_EVALUATE, *out_metrics_json (optional, may be NULL) receives the
 * test-set metrics JSON. */
int mmf_run(const mmf_config* config, int phase, char** out_metrics_json);

/* Runs the seven-configuration comparison grid; writes tables under the
 * config's out_dir. *out_table (optional) receives the aligned text table. */
int mmf_ablate(const mmf_config* config, char** out_table);

/* Noise-robustness grids over the attention and recurrent fusion models.
 * p_values: noise fractions in [0,1]; train_clean / train_noisy select the
 * protocols (nonzero = run). Writes tables + SVG under the config's out_dir;
 * *out_table (optional) receives the text table. */
int mmf_robustness(const mmf_config* config, const double* p_values,
                   int n_p_values, int train_clean, int train_noisy,
                   char** out_table);

/* Re-emits <stem>.{json,csv,txt} under out_dir from a stored metrics JSON
 * file; deterministic and byte-stable. */
int mmf_report(const char* metrics_json_path, const char* out_dir,
               const char* stem);

/* Contrast-limited adaptive histogram equalization on an 8-bit PGM file. */
int mmf_clahe_file(const char* input_pgm, const char* output_pgm,
                   int tile_rows, int tile_cols, double clip_limit);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MMFUSE_H_ */
