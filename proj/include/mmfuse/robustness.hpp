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
// Noise-robustness protocol: estimate data-marginal Gaussian parameters and
// corrupt a fraction p of image pixels / series time steps by replacement.

#ifndef MMFUSE_ROBUSTNESS_HPP_
#define MMFUSE_ROBUSTNESS_HPP_

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "mmfuse/data.hpp"

namespace mmfuse {

struct NoiseSpec {
  double fraction = 0.1;  // p
  // Pooled over all pixels of the sampled images; absent when the sample
  // carried no images.
  std::optional<std::pair<double, double>> image_params;
  // Per continuous channel over all time steps.
  std::array<double, ChannelSchema::kNumContinuous> series_mean{};
  std::array<double, ChannelSchema::kNumContinuous> series_std{};
};

inline constexpr int kNoiseEstimationN = 1000;

// Draws min(n, |records|) records without replacement.
NoiseSpec estimate_noise_params(const std::vector<MultimodalRecord>& records,
                                int n, std::mt19937_64& rng);

// Returns a corrupted copy; the input is never mutated. Selects exactly
// ceil(p*H*W) distinct pixels / ceil(p*t) distinct time steps. Masks,
// one-hots, and time-since-last channels are untouched; image draws are
// clamped to [0,255].
MultimodalRecord perturb(const MultimodalRecord& record, const NoiseSpec& spec,
                         std::mt19937_64& rng);

std::vector<MultimodalRecord> perturb_all(
    const std::vector<MultimodalRecord>& records, const NoiseSpec& spec,
    uint64_t seed);

}  // namespace mmfuse

#endif  // MMFUSE_ROBUSTNESS_HPP_
