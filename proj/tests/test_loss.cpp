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
#include <random>

#include "grad_check.hpp"
#include "mmfuse/loss.hpp"

using namespace mmfuse;

TEST_CASE("s=0 reduces exactly to the sum of task losses") {
  auto u = TaskUncertainty::create(2);
  Tensor losses = Tensor::from({1, 2}, {0.7, 0.3});
  CHECK(uncertainty_loss(losses, u).item() == 0.7 + 0.3);
}

TEST_CASE("single task, s = ln 2") {
  auto u = TaskUncertainty::create(1);
  u.s.value()[0] = std::log(2.0);
  Tensor losses = Tensor::from({1, 1}, {1.0});
  // exp(-ln 2)*1 + ln 2 = 0.5 + 0.69314... = 1.19314...
  CHECK(uncertainty_loss(losses, u).item() ==
        doctest::Approx(0.5 + std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(uncertainty_loss(losses, u).item() - 1.1931) < 1e-4);
}

TEST_CASE("stationary point: d/ds = 0 at L=1, s=0") {
  auto u = TaskUncertainty::create(1);
  Tensor losses = Tensor::from({1, 1}, {1.0});
  Tensor total = uncertainty_loss(losses, u);
  backward(total);
  CHECK(std::abs(u.s.grad()[0]) < 1e-12);
  // And the finite-difference derivative agrees.
  const double eps = 1e-6;
  u.s.value()[0] = eps;
  const double lp = uncertainty_loss(losses, u).item();
  u.s.value()[0] = -eps;
  const double lm = uncertainty_loss(losses, u).item();
  CHECK(std::abs((lp - lm) / (2 * eps)) < 1e-5);
}

TEST_CASE("minimizer over s is log L") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ld(0.05, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double l = ld(rng);
    auto value = [&](double s) { return std::exp(-s) * l + s; };
    const double s_star = std::log(l);
    // Grid minimization around the analytic optimum.
    double best_s = -10, best_v = 1e300;
    for (double s = -5; s <= 5; s += 1e-3) {
      if (value(s) < best_v) {
        best_v = value(s);
        best_s = s;
      }
    }
    CHECK(std::abs(best_s - s_star) < 2e-3);
    // Cross-check via the tensor op at the optimum: gradient vanishes.
    auto u = TaskUncertainty::create(1);
    u.s.value()[0] = s_star;
    Tensor losses = Tensor::from({1, 1}, {l});
    Tensor total = uncertainty_loss(losses, u);
    backward(total);
    CHECK(std::abs(u.s.grad()[0]) < 1e-10);
  }
}

TEST_CASE("length mismatch throws") {
  auto u = TaskUncertainty::create(2);
  Tensor losses = Tensor::from({1, 3}, {0.1, 0.2, 0.3});
  CHECK_THROWS_AS(uncertainty_loss(losses, u), MmfError);
}

TEST_CASE("gradients wrt s and logits match finite differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::bernoulli_distribution bd(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int batch = 3, tasks = 4;
    Tensor logits = Tensor::randn({batch, tasks}, rng, 1.0, true);
    ArrayX yv(batch * tasks);
    for (int i = 0; i < batch * tasks; ++i) yv[i] = bd(rng) ? 1.0 : 0.0;
    Tensor labels = Tensor::from_array({batch, tasks}, yv);
    auto u = TaskUncertainty::create(tasks);
    for (int i = 0; i < tasks; ++i) u.s.value()[i] = 0.5 * nd(rng);
    auto forward = [&]() {
      return uncertainty_loss(per_task_bce(logits, labels), u);
    };
    CHECK(testutil::max_grad_rel_err(forward, {logits, u.s}) < 1e-4);
  }
}

TEST_CASE("variances are exp(s)") {
  auto u = TaskUncertainty::create(3);
  u.s.value()[0] = 0.0;
  u.s.value()[1] = 1.0;
  u.s.value()[2] = -1.0;
  ArrayX v = u.variances();
  CHECK(v[0] == doctest::Approx(1.0));
  CHECK(v[1] == doctest::Approx(std::exp(1.0)));
  CHECK(v[2] == doctest::Approx(std::exp(-1.0)));
}
