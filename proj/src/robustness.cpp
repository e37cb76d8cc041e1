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

#include "mmfuse/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfuse/util.hpp"

namespace mmfuse {

namespace {

// Exactly k distinct indices from [0, n), uniform; partial Fisher-Yates.
std::vector<int64_t> sample_distinct(int64_t n, int64_t k,
                                     std::mt19937_64& rng) {
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<int64_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

NoiseSpec estimate_noise_params(const std::vector<MultimodalRecord>& records,
                                int n, std::mt19937_64& rng) {
  if (records.empty()) throw MmfError("estimate_noise_params: empty dataset");
  const int64_t take =
      std::min<int64_t>(n, static_cast<int64_t>(records.size()));
  if (take < 1) throw MmfError("estimate_noise_params: n must be >= 1");
  std::vector<int64_t> chosen =
      sample_distinct(static_cast<int64_t>(records.size()), take, rng);

  NoiseSpec spec;
  std::array<double, ChannelSchema::kNumContinuous> sum{}, sum_sq{};
  int64_t steps = 0;
  double px_sum = 0, px_sq = 0;
  int64_t px_n = 0;
  for (int64_t i : chosen) {
    const MultimodalRecord& r = records[i];
    for (int b = 0; b < r.series.t; ++b) {
      for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
        const double v = r.series.at(b, c);
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
    steps += r.series.t;
    if (r.image.has_value()) {
      for (uint8_t p : r.image->px) {
        px_sum += p;
        px_sq += static_cast<double>(p) * p;
      }
      px_n += static_cast<int64_t>(r.image->px.size());
    }
  }
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    spec.series_mean[c] = sum[c] / steps;
    spec.series_std[c] = std::sqrt(std::max(
        0.0, sum_sq[c] / steps - spec.series_mean[c] * spec.series_mean[c]));
  }
  if (px_n > 0) {
    const double m = px_sum / px_n;
    spec.image_params = {
        m, std::sqrt(std::max(0.0, px_sq / px_n - m * m))};
  }
  return spec;
}

MultimodalRecord perturb(const MultimodalRecord& record, const NoiseSpec& spec,
                         std::mt19937_64& rng) {
  if (spec.fraction < 0 || spec.fraction > 1) {
    throw MmfError("perturb: fraction outside [0,1]");
  }
  MultimodalRecord out = record;
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int64_t k_steps = static_cast<int64_t>(
      std::ceil(spec.fraction * static_cast<double>(out.series.t)));
  for (int64_t b : sample_distinct(out.series.t, k_steps, rng)) {
    for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
      out.series.at(static_cast<int>(b), c) =
          spec.series_mean[c] + spec.series_std[c] * gauss(rng);
    }
  }

  if (out.image.has_value()) {
    const int64_t n_px = static_cast<int64_t>(out.image->px.size());
    const int64_t k_px = static_cast<int64_t>(
        std::ceil(spec.fraction * static_cast<double>(n_px)));
    if (k_px > 0 && !spec.image_params.has_value()) {
      throw MmfError("perturb: record has an image but spec has no image params");
    }
    const auto [mean, std_dev] =
        spec.image_params.value_or(std::pair<double, double>{0.0, 0.0});
    for (int64_t p : sample_distinct(n_px, k_px, rng)) {
      const double v = mean + std_dev * gauss(rng);
      out.image->px[p] = static_cast<uint8_t>(
          std::min(255.0, std::max(0.0, std::floor(v + 0.5))));
    }
  }
  return out;
}

std::vector<MultimodalRecord> perturb_all(
    const std::vector<MultimodalRecord>& records, const NoiseSpec& spec,
    uint64_t seed) {
  std::vector<MultimodalRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::mt19937_64 rng(fnv1a(r.episode_id, fnv1a(hex64(seed), fnv1a("perturb"))));
    out.push_back(perturb(r, spec, rng));
  }
  return out;
}

}  // namespace mmfuse
