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

#include <cmath>
#include <set>

#include "mmfuse/robustness.hpp"

using namespace mmfuse;

namespace {

// A record with constant continuous channels and a simple image.
MultimodalRecord flat_record(const std::string& id, int t, double level,
                             bool with_image) {
  MultimodalRecord r;
  r.patient_id = id;
  r.episode_id = id + "_e1";
  r.series.t = t;
  r.series.values.assign(static_cast<size_t>(t) * ChannelSchema::kTotalChannels,
                         0.0);
  for (int b = 0; b < t; ++b) {
    for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
      r.series.at(b, c) = level;
    }
    // Distinctive non-continuous content that perturbation must preserve.
    r.series.at(b, 12) = 1.0;                               // one-hot
    r.series.at(b, ChannelSchema::kNumContinuous + 30) = 1;  // mask
    r.series.at(b, 59) = 2.0 * b;                            // time-since-last
  }
  if (with_image) {
    GrayImage img;
    img.h = img.w = 8;
    img.px.assign(64, 100);
    r.image = img;
  }
  r.labels = {0};
  return r;
}

}  // namespace

TEST_CASE("noise estimation recovers exact moments of a two-point dataset") {
  // Channel values alternate 0 and 2 across two records -> mean 1, std 1.
  std::vector<MultimodalRecord> records = {flat_record("p0", 4, 0.0, true),
                                           flat_record("p1", 4, 2.0, true)};
  records[0].image->px.assign(64, 50);
  records[1].image->px.assign(64, 150);
  std::mt19937_64 rng(1);
  NoiseSpec spec = estimate_noise_params(records, 1000, rng);
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    CHECK(spec.series_mean[c] == doctest::Approx(1.0));
    CHECK(spec.series_std[c] == doctest::Approx(1.0));
  }
  REQUIRE(spec.image_params.has_value());
  CHECK(spec.image_params->first == doctest::Approx(100.0));
  CHECK(spec.image_params->second == doctest::Approx(50.0));
}

TEST_CASE("noise estimation of a constant feature gives (c, 0)") {
  std::vector<MultimodalRecord> records = {flat_record("p0", 6, 3.5, false)};
  std::mt19937_64 rng(1);
  NoiseSpec spec = estimate_noise_params(records, 1000, rng);
  CHECK(spec.series_mean[0] == doctest::Approx(3.5));
  CHECK(spec.series_std[0] == 0.0);
  CHECK_FALSE(spec.image_params.has_value());  // no images in the sample
}

TEST_CASE("p = 0 perturbation is an exact copy") {
  MultimodalRecord r = flat_record("p0", 5, 1.25, true);
  NoiseSpec spec;
  spec.fraction = 0.0;
  // image_params deliberately unset: p = 0 must not require them.
  std::mt19937_64 rng(3);
  MultimodalRecord out = perturb(r, spec, rng);
  CHECK(out == r);
}

TEST_CASE("perturbation hits exactly ceil(p*t) steps and ceil(p*n) pixels") {
  const int t = 7;
  MultimodalRecord r = flat_record("p0", t, 5.0, true);
  NoiseSpec spec;
  spec.fraction = 0.3;  // ceil(0.3*7) = 3 steps, ceil(0.3*64) = 20 pixels
  spec.image_params = {{200.0, 0.0}};
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    spec.series_mean[c] = -100.0;  // far from the clean level 5.0
    spec.series_std[c] = 0.0;
  }
  std::mt19937_64 rng(11);
  MultimodalRecord out = perturb(r, spec, rng);

  int changed_steps = 0;
  for (int b = 0; b < t; ++b) {
    const bool hit = out.series.at(b, 0) != 5.0;
    changed_steps += hit;
    for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
      // A hit replaces every continuous channel of the step; std 0 makes the
      // replacement exactly the mean.
      CHECK(out.series.at(b, c) == (hit ? -100.0 : 5.0));
    }
    // Non-continuous channels never change.
    CHECK(out.series.at(b, 12) == 1.0);
    CHECK(out.series.at(b, ChannelSchema::kNumContinuous + 30) == 1.0);
    CHECK(out.series.at(b, 59) == 2.0 * b);
  }
  CHECK(changed_steps == 3);

  int changed_px = 0;
  for (uint8_t p : out.image->px) {
    CHECK((p == 100 || p == 200));
    changed_px += p == 200;
  }
  CHECK(changed_px == 20);
  CHECK(r == flat_record("p0", t, 5.0, true));  // input untouched
}

TEST_CASE("p = 1 with zero std replaces everything by the means") {
  MultimodalRecord r = flat_record("p0", 4, 9.0, true);
  NoiseSpec spec;
  spec.fraction = 1.0;
  spec.image_params = {{300.0, 0.0}};  // clamps to 255
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    spec.series_mean[c] = 7.0;
  }
  std::mt19937_64 rng(5);
  MultimodalRecord out = perturb(r, spec, rng);
  for (int b = 0; b < 4; ++b) {
    for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
      CHECK(out.series.at(b, c) == 7.0);
    }
  }
  for (uint8_t p : out.image->px) CHECK(p == 255);
}

TEST_CASE("perturb_all is deterministic per seed and order-independent") {
  std::vector<MultimodalRecord> records = {flat_record("p0", 6, 1.0, true),
                                           flat_record("p1", 6, 2.0, true),
                                           flat_record("p2", 6, 3.0, false)};
  NoiseSpec spec;
  spec.fraction = 0.5;
  spec.image_params = {{120.0, 30.0}};
  for (int c = 0; c < ChannelSchema::kNumContinuous; ++c) {
    spec.series_mean[c] = 0.0;
    spec.series_std[c] = 1.0;
  }
  auto a = perturb_all(records, spec, 42);
  auto b = perturb_all(records, spec, 42);
  CHECK(a == b);
  auto c = perturb_all(records, spec, 43);
  CHECK(a != c);

  // Episode-keyed streams: reversing the list reverses the outputs exactly.
  std::vector<MultimodalRecord> reversed(records.rbegin(), records.rend());
  auto d = perturb_all(reversed, spec, 42);
  CHECK(d[0] == a[2]);
  CHECK(d[2] == a[0]);
}

TEST_CASE("image-bearing record with p > 0 and no image params throws") {
  MultimodalRecord r = flat_record("p0", 4, 1.0, true);
  NoiseSpec spec;
  spec.fraction = 0.2;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(perturb(r, spec, rng), MmfError);
}

TEST_CASE("estimation samples without replacement and respects n") {
  // 10 records; n = 4 must average over exactly 4 of them. With levels
  // 0..9 all distinct, a with-replacement bug would show up as a mean
  // outside the achievable set for some seed; instead verify determinism
  // and that two different rngs can give different subsets.
  std::vector<MultimodalRecord> records;
  for (int i = 0; i < 10; ++i) {
    records.push_back(flat_record("p" + std::to_string(i), 2,
                                  static_cast<double>(i), false));
  }
  std::mt19937_64 r1(1), r1b(1), r2(2);
  NoiseSpec a = estimate_noise_params(records, 4, r1);
  NoiseSpec b = estimate_noise_params(records, 4, r1b);
  CHECK(a.series_mean[0] == b.series_mean[0]);
  // Mean of 4 distinct levels from {0..9}: 4*mean must be an integer sum of
  // 4 distinct values in [0+1+2+3, 6+7+8+9].
  const double s = a.series_mean[0] * 4;
  CHECK(std::abs(s - std::round(s)) < 1e-9);
  CHECK(s >= 6.0);
  CHECK(s <= 30.0);
  NoiseSpec c = estimate_noise_params(records, 10, r2);
  CHECK(c.series_mean[0] == doctest::Approx(4.5));  // all records
}
