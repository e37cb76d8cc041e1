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

#include "mmfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "mmfuse/util.hpp"

namespace mmfuse {

const ChannelSchema& ChannelSchema::standard() {
  static const ChannelSchema schema = [] {
    ChannelSchema s;
    auto cont = [](const char* name, double normal, double lo, double hi) {
      VariableDef v;
      v.name = name;
      v.normal_value = normal;
      v.typical_low = lo;
      v.typical_high = hi;
      return v;
    };
    auto cat = [](const char* name, int n, int normal) {
      VariableDef v;
      v.name = name;
      v.categorical = true;
      v.n_categories = n;
      v.normal_category = normal;
      return v;
    };
    s.variables = {
        cont("diastolic_bp", 70.0, 40.0, 110.0),
        cont("fraction_inspired_o2", 0.21, 0.21, 1.0),
        cont("glucose", 128.0, 50.0, 300.0),
        cont("heart_rate", 86.0, 40.0, 160.0),
        cont("height_cm", 170.0, 140.0, 200.0),
        cont("mean_bp", 77.0, 45.0, 120.0),
        cont("o2_saturation", 98.0, 80.0, 100.0),
        cont("respiratory_rate", 19.0, 8.0, 40.0),
        cont("systolic_bp", 118.0, 80.0, 200.0),
        cont("temperature_c", 36.6, 34.0, 41.0),
        cont("weight_kg", 81.0, 40.0, 160.0),
        cont("ph", 7.4, 7.0, 7.8),
        cat("capillary_refill", 2, 0),
        cat("gcs_eye_opening", 4, 3),
        cat("gcs_motor_response", 6, 5),
        cat("gcs_verbal_response", 5, 4),
        cat("gcs_total", 13, 12),
    };
    return s;
  }();
  return schema;
}

int ChannelSchema::onehot_offset(int v) const {
  if (v < kNumContinuous || v >= kNumVariables) {
    throw MmfError("onehot_offset: variable " + std::to_string(v) +
                   " is not categorical");
  }
  int off = kNumContinuous;
  for (int i = kNumContinuous; i < v; ++i) off += variables[i].n_categories;
  return off;
}

std::vector<std::string> ChannelSchema::channel_names() const {
  std::vector<std::string> names;
  names.reserve(kTotalChannels);
  for (int v = 0; v < kNumContinuous; ++v) names.push_back(variables[v].name);
  for (int v = kNumContinuous; v < kNumVariables; ++v) {
    for (int c = 0; c < variables[v].n_categories; ++c) {
      names.push_back(variables[v].name + "_" + std::to_string(c));
    }
  }
  for (int v = 0; v < kNumVariables; ++v) {
    names.push_back("mask_" + variables[v].name);
  }
  for (int v = 0; v < kNumVariables; ++v) {
    names.push_back("tsl_" + variables[v].name);
  }
  return names;
}

TaskSpec TaskSpec::mortality() {
  TaskSpec t;
  t.kind = TaskKind::kMortality;
  t.num_labels = 1;
  t.label_names = {"in_hospital_mortality"};
  return t;
}

TaskSpec TaskSpec::phenotyping() {
  TaskSpec t;
  t.kind = TaskKind::kPhenotyping;
  t.num_labels = 25;
  t.label_names = {
      "Acute and unspecified renal failure",
      "Acute cerebrovascular disease",
      "Acute myocardial infarction",
      "Cardiac dysrhythmias",
      "Chronic kidney disease",
      "Chronic obstructive pulmonary disease and bronchiectasis",
      "Complications of surgical procedures or medical care",
      "Conduction disorders",
      "Congestive heart failure; nonhypertensive",
      "Coronary atherosclerosis and other heart disease",
      "Diabetes mellitus with complications",
      "Diabetes mellitus without complication",
      "Disorders of lipid metabolism",
      "Essential hypertension",
      "Fluid and electrolyte disorders",
      "Gastrointestinal hemorrhage",
      "Hypertension with complications and secondary hypertension",
      "Other liver diseases",
      "Other lower respiratory disease",
      "Other upper respiratory disease",
      "Pleurisy; pneumothorax; pulmonary collapse",
      "Pneumonia",
      "Respiratory failure; insufficiency; arrest (adult)",
      "Septicemia (except in labor)",
      "Shock",
  };
  return t;
}

double LabelModel::p_positive(int z_ehr, int z_img) const {
  const double logit =
      bias + marginal * z_ehr + marginal * z_img + interaction * z_ehr * z_img;
  return 1.0 / (1.0 + std::exp(-logit));
}

namespace {

uint64_t stream_seed(const std::string& id, uint64_t seed, const char* what) {
  return fnv1a(what, fnv1a(id, fnv1a(hex64(seed))));
}

void validate(const CohortConfig& c) {
  if (c.n_patients < 10) throw MmfError("cohort config: n_patients must be >= 10");
  if (c.pairing_rate < 0.0 || c.pairing_rate > 1.0) {
    throw MmfError("cohort config: pairing_rate must lie in [0,1]");
  }
  if (c.signal_strength < 0.0) {
    throw MmfError("cohort config: signal_strength must be >= 0");
  }
  if (c.duration_hours <= 0.0) {
    throw MmfError("cohort config: duration_hours must be > 0");
  }
  if (c.image_size < 16) throw MmfError("cohort config: image_size must be >= 16");
  if (!c.label_flip_rates.empty() &&
      static_cast<int>(c.label_flip_rates.size()) != c.task.num_labels) {
    throw MmfError("cohort config: label_flip_rates length != num_labels");
  }
  for (double r : c.label_flip_rates) {
    if (r < 0.0 || r > 0.5) {
      throw MmfError("cohort config: label_flip_rates entries must lie in [0,0.5]");
    }
  }
}

// Time-series half of the planted signal: z_ehr shifts the level of a few
// vital signs and flips the sign of their drift over the stay.
RawEpisode synth_episode(const std::string& patient_id,
                         const std::string& episode_id, double duration,
                         int z_ehr, std::mt19937_64& rng) {
  const ChannelSchema& schema = ChannelSchema::standard();
  RawEpisode ep;
  ep.patient_id = patient_id;
  ep.episode_id = episode_id;
  ep.duration_hours = duration;
  std::uniform_real_distribution<double> td(0.0, duration);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> count_d(8, 24);
  for (int v = 0; v < ChannelSchema::kNumVariables; ++v) {
    const VariableDef& def = schema.variables[v];
    const int n_events = def.categorical ? count_d(rng) / 4 + 1 : count_d(rng);
    // Signal-carrying variables: heart rate (3), respiratory rate (7),
    // systolic bp (8). Level shift plus opposite-sign drift.
    const bool carries = v == 3 || v == 7 || v == 8;
    const double span = def.typical_high - def.typical_low;
    const double level = carries ? z_ehr * 0.22 * span : 0.0;
    const double drift = carries ? -z_ehr * 0.18 * span : 0.0;
    for (int e = 0; e < n_events; ++e) {
      RawEvent ev;
      ev.time_hours = td(rng);
      ev.variable_id = v;
      if (def.categorical) {
        std::uniform_int_distribution<int> cd(0, def.n_categories - 1);
        // Mostly the normal category, occasionally random.
        ev.value = (std::uniform_real_distribution<double>(0, 1)(rng) < 0.8)
                       ? def.normal_category
                       : cd(rng);
      } else {
        const double frac = ev.time_hours / duration;
        double val = def.normal_value + level + drift * frac +
                     0.06 * span * nd(rng);
        ev.value = std::min(def.typical_high, std::max(def.typical_low, val));
      }
      ep.events.push_back(ev);
    }
  }
  std::sort(ep.events.begin(), ep.events.end(),
            [](const RawEvent& a, const RawEvent& b) {
              if (a.time_hours != b.time_hours) return a.time_hours < b.time_hours;
              return a.variable_id < b.variable_id;
            });
  return ep;
}

// Image half of the planted signal: a bright blob near the top
// (z_img = +1) or bottom (z_img = -1) of a noisy gradient background, plus a
// distractor line. Vertical placement keeps the signal invariant under the
// horizontal-flip augmentation used at train time.
GrayImage synth_image(int size, int z_img, std::mt19937_64& rng) {
  GrayImage img(size, size);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double cy = size * (z_img > 0 ? 0.28 : 0.72) + size * 0.04 * nd(rng);
  const double cx = size * (0.35 + 0.3 * ud(rng));
  const double radius = size * (0.10 + 0.04 * ud(rng));
  const int line_y = static_cast<int>(size * ud(rng));
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = 40.0 + 60.0 * y / size + 10.0 * nd(rng);
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      v += 130.0 * std::exp(-d2 / (2.0 * radius * radius));
      if (std::abs(y - line_y) <= 1) v += 35.0;
      img.at(y, x) = static_cast<uint8_t>(
          std::min(255.0, std::max(0.0, std::floor(v + 0.5))));
    }
  }
  return img;
}

}  // namespace

std::pair<int, int> planted_latents(const std::string& patient_id,
                                    uint64_t seed) {
  const uint64_t h = stream_seed(patient_id, seed, "latents");
  return {(h & 1) ? 1 : -1, (h & 2) ? 1 : -1};
}

std::vector<MultimodalRecord> generate_cohort(const CohortConfig& config,
                                              uint64_t seed) {
  validate(config);
  const ChannelSchema& schema = ChannelSchema::standard();
  LabelModel model;
  model.interaction = config.signal_strength;
  std::vector<MultimodalRecord> out;
  for (int p = 0; p < config.n_patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof(pid), "p%06d", p);
    const std::string patient_id = pid;
    auto [z_ehr, z_img] = planted_latents(patient_id, seed);
    std::mt19937_64 prng(stream_seed(patient_id, seed, "patient"));
    const int n_episodes =
        std::uniform_real_distribution<double>(0, 1)(prng) <
                config.second_episode_prob
            ? 2
            : 1;
    for (int e = 0; e < n_episodes; ++e) {
      const std::string episode_id = patient_id + "_e" + std::to_string(e);
      std::mt19937_64 rng(stream_seed(episode_id, seed, "episode"));
      MultimodalRecord rec;
      rec.patient_id = patient_id;
      rec.episode_id = episode_id;
      RawEpisode ep = synth_episode(patient_id, episode_id,
                                    config.duration_hours, z_ehr, rng);
      rec.series = discretize(ep, schema);
      if (std::uniform_real_distribution<double>(0, 1)(rng) <
          config.pairing_rate) {
        rec.image = synth_image(config.image_size, z_img, rng);
      }
      // Task t gets a small deterministic bias spread so prevalences differ.
      std::mt19937_64 lrng(stream_seed(episode_id, seed, "labels"));
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      rec.labels.resize(config.task.num_labels);
      for (int t = 0; t < config.task.num_labels; ++t) {
        LabelModel m = model;
        m.bias += 0.25 * ((t % 5) - 2);
        int y = ud(lrng) < m.p_positive(z_ehr, z_img) ? 1 : 0;
        if (!config.label_flip_rates.empty() &&
            ud(lrng) < config.label_flip_rates[t]) {
          y = 1 - y;
        }
        rec.labels[t] = y;
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

SplitRecords split_by_patient(const std::vector<MultimodalRecord>& records,
                              const std::array<double, 3>& ratios,
                              uint64_t seed) {
  if (records.empty()) throw MmfError("split_by_patient: empty input");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw MmfError("split_by_patient: ratios must sum to 1");
  }
  std::vector<std::string> patients;
  for (const auto& r : records) patients.push_back(r.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  // Rank patients by a hash of (patient_id, seed): assignment depends on
  // nothing else, and taking ranks gives exact split sizes.
  std::vector<std::pair<uint64_t, std::string>> keyed;
  keyed.reserve(patients.size());
  for (const auto& p : patients) {
    keyed.emplace_back(stream_seed(p, seed, "split"), p);
  }
  std::sort(keyed.begin(), keyed.end());
  const int n = static_cast<int>(keyed.size());
  int n_train = static_cast<int>(std::floor(ratios[0] * n + 0.5));
  int n_val = static_cast<int>(std::floor(ratios[1] * n + 0.5));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  std::map<std::string, int> assign;
  for (int i = 0; i < n; ++i) {
    assign[keyed[i].second] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  SplitRecords out;
  for (const auto& r : records) {
    switch (assign[r.patient_id]) {
      case 0: out.train.push_back(r); break;
      case 1: out.val.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

DiscretizedSeries discretize(const RawEpisode& episode,
                             const ChannelSchema& schema) {
  const double duration = episode.duration_hours;
  if (duration <= 0) throw MmfError("discretize: non-positive duration");
  for (const auto& ev : episode.events) {
    if (ev.time_hours < 0 || ev.time_hours > duration) {
      throw MmfError("discretize: event at " + std::to_string(ev.time_hours) +
                     "h outside episode window");
    }
    if (ev.variable_id < 0 || ev.variable_id >= ChannelSchema::kNumVariables) {
      throw MmfError("discretize: bad variable id");
    }
    const VariableDef& def = schema.variables[ev.variable_id];
    if (def.categorical &&
        (ev.value < 0 || ev.value >= def.n_categories ||
         ev.value != std::floor(ev.value))) {
      throw MmfError("discretize: category out of range for " + def.name);
    }
  }
  const int t =
      static_cast<int>(std::ceil(duration / ChannelSchema::kBinHours));
  DiscretizedSeries out;
  out.t = t;
  out.values.assign(static_cast<size_t>(t) * ChannelSchema::kTotalChannels, 0.0);

  // Events sorted by time; within a bin the last observation wins.
  std::vector<const RawEvent*> sorted;
  sorted.reserve(episode.events.size());
  for (const auto& ev : episode.events) sorted.push_back(&ev);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RawEvent* a, const RawEvent* b) {
                     return a->time_hours < b->time_hours;
                   });

  constexpr int kV = ChannelSchema::kNumVariables;
  std::array<double, kV> last_value;
  std::array<double, kV> last_time;
  std::array<bool, kV> seen{};
  last_value.fill(0);
  last_time.fill(0);
  size_t next_event = 0;
  for (int b = 0; b < t; ++b) {
    const double bin_end =
        std::min(duration, (b + 1) * ChannelSchema::kBinHours);
    std::array<bool, kV> observed_in_bin{};
    while (next_event < sorted.size() &&
           (sorted[next_event]->time_hours < bin_end ||
            (b == t - 1 && sorted[next_event]->time_hours <= duration))) {
      const RawEvent& ev = *sorted[next_event];
      last_value[ev.variable_id] = ev.value;
      last_time[ev.variable_id] = ev.time_hours;
      seen[ev.variable_id] = true;
      observed_in_bin[ev.variable_id] = true;
      ++next_event;
    }
    for (int v = 0; v < kV; ++v) {
      const VariableDef& def = schema.variables[v];
      if (def.categorical) {
        const int cat = seen[v] ? static_cast<int>(last_value[v])
                                : def.normal_category;
        out.at(b, schema.onehot_offset(v) + cat) = 1.0;
      } else {
        out.at(b, schema.continuous_channel(v)) =
            seen[v] ? last_value[v] : def.normal_value;
      }
      out.at(b, schema.mask_channel(v)) = observed_in_bin[v] ? 1.0 : 0.0;
      const double tsl = seen[v] ? bin_end - last_time[v] : bin_end;
      out.at(b, schema.tsl_channel(v)) = std::min(tsl, duration);
    }
  }
  return out;
}

NormStats fit_norm_stats(const std::vector<MultimodalRecord>& train_records) {
  if (train_records.empty()) throw MmfError("fit_norm_stats: empty input");
  NormStats stats;
  std::array<double, ChannelSchema::kNumContinuous> sum{}, sum_sq{};
  int64_t n = 0;
  for (const auto& r : train_records) {
    for (int b = 0; b < r.series.t; ++b) {
      for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
        const double v = r.series.at(b, c);
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
    n += r.series.t;
  }
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    stats.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sum_sq[c] / n - stats.mean[c] * stats.mean[c]);
    stats.std[c] = std::sqrt(var);
  }
  return stats;
}

DiscretizedSeries standardize(const DiscretizedSeries& series,
                              const NormStats& stats) {
  DiscretizedSeries out = series;
  for (int b = 0; b < out.t; ++b) {
    for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
      if (stats.std[c] > 0) {
        out.at(b, c) = (out.at(b, c) - stats.mean[c]) / stats.std[c];
      }
    }
  }
  return out;
}

}  // namespace mmfuse
