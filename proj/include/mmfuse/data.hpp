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
// Synthetic paired time-series / image cohort: generation with a planted
// cross-modal signal, patient-level splitting, 2-hour discretization into the
// 76-channel layout, standardization, and dataset directory I/O.

#ifndef MMFUSE_DATA_HPP_
#define MMFUSE_DATA_HPP_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/image_ops.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// 17 clinical variables: 12 continuous then 5 categorical.
struct VariableDef {
  std::string name;
  bool categorical = false;
  int n_categories = 0;     // categorical only
  double normal_value = 0;  // continuous: imputation value
  int normal_category = 0;  // categorical: imputation category
  double typical_low = 0;   // continuous: plausible range for synthesis
  double typical_high = 0;
};

// Row layout of one discretized time step, 76 channels total:
//   [0,12)   continuous values
//   [12,42)  one-hot blocks for the 5 categorical variables (2+4+6+5+13)
//   [42,59)  presence masks, one per variable
//   [59,76)  hours since last observation, one per variable
struct ChannelSchema {
  std::vector<VariableDef> variables;  // 17
  static constexpr int kNumVariables = 17;
  static constexpr int kNumContinuous = 12;
  static constexpr int kOneHotTotal = 30;
  static constexpr int kTotalChannels = 76;
  static constexpr double kBinHours = 2.0;

  static const ChannelSchema& standard();
  // Channel index of continuous variable v (v < 12).
  int continuous_channel(int v) const { return v; }
  // First channel of the one-hot block for categorical variable v (v >= 12).
  int onehot_offset(int v) const;
  int mask_channel(int v) const { return kNumContinuous + kOneHotTotal + v; }
  int tsl_channel(int v) const {
    return kNumContinuous + kOneHotTotal + kNumVariables + v;
  }
  std::vector<std::string> channel_names() const;
};

struct RawEvent {
  double time_hours = 0;
  int variable_id = 0;
  double value = 0;  // category index for categorical variables
};

struct RawEpisode {
  std::string patient_id;
  std::string episode_id;
  double duration_hours = 48.0;
  std::vector<RawEvent> events;
};

struct DiscretizedSeries {
  int t = 0;
  std::vector<double> values;  // t * 76, row-major
  double& at(int step, int channel) {
    return values[static_cast<size_t>(step) * ChannelSchema::kTotalChannels +
                  channel];
  }
  double at(int step, int channel) const {
    return values[static_cast<size_t>(step) * ChannelSchema::kTotalChannels +
                  channel];
  }
  bool operator==(const DiscretizedSeries&) const = default;
};

enum class TaskKind { kMortality, kPhenotyping };

struct TaskSpec {
  TaskKind kind = TaskKind::kMortality;
  int num_labels = 1;
  std::vector<std::string> label_names;

  static TaskSpec mortality();
  static TaskSpec phenotyping();  // 25 condition labels
};

struct MultimodalRecord {
  std::string patient_id;
  std::string episode_id;
  DiscretizedSeries series;
  std::optional<GrayImage> image;  // absent = unpaired, never a zero image
  std::vector<int> labels;         // length = TaskSpec::num_labels
  bool operator==(const MultimodalRecord&) const = default;
};

// Logistic label model over the per-patient latent pair
// (z_ehr, z_img) in {-1,+1}^2:
//   logit = bias + marginal * z_ehr + marginal * z_img
//         + interaction * z_ehr * z_img
// With a dominant interaction term neither latent alone predicts the label
// well; the small marginal terms leave each modality a weak learnable signal
// (so unimodal pretraining aligns encoders with the latents) while the fused
// view is far stronger — mutual information of either latent alone with the
// label stays below a fifth of the joint.
struct LabelModel {
  double bias = 0.0;
  double marginal = 1.0;
  double interaction = 3.0;
  double p_positive(int z_ehr, int z_img) const;
};

struct CohortConfig {
  int n_patients = 2000;
  double pairing_rate = 0.18;  // fraction of records that carry an image
  TaskSpec task = TaskSpec::mortality();
  double signal_strength = 3.0;  // interaction coefficient of the label model
  double duration_hours = 48.0;
  int image_size = 256;
  double second_episode_prob = 0.05;
  // Per-task independent label-flip noise; empty = no noise. Used by the
  // task-uncertainty experiments.
  std::vector<double> label_flip_rates;
};

struct NormStats {
  std::array<double, ChannelSchema::kNumContinuous> mean{};
  std::array<double, ChannelSchema::kNumContinuous> std{};
};

// Deterministic for fixed (config, seed); per-record streams are derived
// from hashes of the ids so generation order is irrelevant.
std::vector<MultimodalRecord> generate_cohort(const CohortConfig& config,
                                              uint64_t seed);

// The latent pair planted for a patient id at a given seed. Exposed so tests
// can verify the planted-signal construction without re-deriving it.
std::pair<int, int> planted_latents(const std::string& patient_id,
                                    uint64_t seed);

struct SplitRecords {
  std::vector<MultimodalRecord> train, val, test;
};

// Patient-disjoint split; assignment depends only on (patient_id, seed).
SplitRecords split_by_patient(const std::vector<MultimodalRecord>& records,
                              const std::array<double, 3>& ratios,
                              uint64_t seed);

DiscretizedSeries discretize(const RawEpisode& episode,
                             const ChannelSchema& schema);

NormStats fit_norm_stats(const std::vector<MultimodalRecord>& train_records);
DiscretizedSeries standardize(const DiscretizedSeries& series,
                              const NormStats& stats);

// Directory layout: manifest.json + series/<episode>.csv + images/<episode>.pgm.
void save_dataset(const std::vector<MultimodalRecord>& records,
                  const TaskSpec& task, uint64_t seed, const std::string& dir);
struct LoadedDataset {
  std::vector<MultimodalRecord> records;
  TaskSpec task;
  uint64_t seed = 0;
};
LoadedDataset load_dataset(const std::string& dir);

}  // namespace mmfuse

#endif  // MMFUSE_DATA_HPP_
