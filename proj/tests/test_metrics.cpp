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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mmfuse/metrics.hpp"

using namespace mmfuse;

namespace {

// O(n^2) pairwise oracle: fraction of (pos, neg) pairs won, ties half-credit.
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double won = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) won += 1.0;
      else if (s[i] == s[j]) won += 0.5;
    }
  }
  return won / static_cast<double>(pairs);
}

// Brute-force average precision: walk ranks in descending score order
// (stable on ties) and average precision at each positive.
double auprc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s[a] > s[b]; });
  double sum = 0.0;
  int tp = 0, n_pos = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (y[order[k]] == 1) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  for (int v : y) n_pos += v;
  return sum / n_pos;
}

}  // namespace

TEST_CASE("hand-derived auroc cases") {
  CHECK(auroc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == 1.0);
  // Positives 0.9, 0.3; negatives 0.2, 0.8. Pairs won: 0.9>0.2, 0.9>0.8,
  // 0.3>0.2; lost: 0.3<0.8. 3/4 = 0.75.
  CHECK(auroc({0.9, 0.2, 0.8, 0.3}, {1, 0, 0, 1}) == 0.75);
  CHECK(auroc({0.9, 0.2, 0.8, 0.3}, {1, 0, 0, 1}) ==
        auroc_oracle({0.9, 0.2, 0.8, 0.3}, {1, 0, 0, 1}));
  CHECK(auroc({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), MmfError);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), MmfError);
}

TEST_CASE("hand-derived auprc cases") {
  CHECK(auprc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(auprc({0.9, 0.1}, {0, 1}) == 0.5);
  CHECK(auprc({0.3, 0.7, 0.5}, {1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(auprc({0.1, 0.2}, {0, 0}), MmfError);
}

TEST_CASE("500 random vectors with ties match the brute-force oracles") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nd(2, 60);
  std::uniform_int_distribution<int> grid(0, 9);  // coarse grid forces ties
  std::bernoulli_distribution bd(0.4);
  int done = 0;
  while (done < 500) {
    const int n = nd(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    int n_pos = 0;
    for (int i = 0; i < n; ++i) {
      s[i] = grid(rng) / 10.0;
      y[i] = bd(rng) ? 1 : 0;
      n_pos += y[i];
    }
    if (n_pos == 0 || n_pos == n) continue;
    ++done;
    CHECK(std::abs(auroc(s, y) - auroc_oracle(s, y)) < 1e-12);
    CHECK(std::abs(auprc(s, y) - auprc_oracle(s, y)) < 1e-12);
  }
}

TEST_CASE("auroc is invariant to strictly monotone score transforms") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> sd(0.0, 1.0);
  std::bernoulli_distribution bd(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 30;
    std::vector<double> s(n), s2(n);
    std::vector<int> y(n);
    int n_pos = 0;
    for (int i = 0; i < n; ++i) {
      s[i] = sd(rng);
      s2[i] = std::exp(3.0 * s[i]) - 2.0;
      y[i] = bd(rng) ? 1 : 0;
      n_pos += y[i];
    }
    if (n_pos == 0 || n_pos == n) continue;
    CHECK(auroc(s, y) == doctest::Approx(auroc(s2, y)).epsilon(1e-12));
    CHECK(auprc(s, y) == doctest::Approx(auprc(s2, y)).epsilon(1e-12));
  }
}

TEST_CASE("f1 from explicit confusion matrices") {
  // preds: 1,1,0,0 ; labels: 1,0,1,0 -> tp=1 fp=1 fn=1 tn=1
  F1Pair f = f1_scores({0.9, 0.8, 0.2, 0.1}, {1, 0, 1, 0});
  CHECK(f.binary_f1 == doctest::Approx(0.5));
  CHECK(f.macro_f1 == doctest::Approx(0.5));
  // All predicted negative, one positive label: pos-F1 0 (zero denom policy
  // applies only when tp=fp=fn=0), neg-F1 = 2*2/(2*2+0+1).
  F1Pair g = f1_scores({0.1, 0.2, 0.3}, {1, 0, 0});
  CHECK(g.binary_f1 == 0.0);
  CHECK(g.macro_f1 == doctest::Approx(0.5 * (0.0 + 4.0 / 5.0)));
  // Perfect prediction.
  F1Pair h = f1_scores({0.9, 0.1}, {1, 0});
  CHECK(h.binary_f1 == 1.0);
  CHECK(h.macro_f1 == 1.0);
  // Degenerate: no positives anywhere -> pos-F1 defined as 0.
  F1Pair z = f1_scores({0.1, 0.2}, {0, 0});
  CHECK(z.binary_f1 == 0.0);
  CHECK(z.macro_f1 == doctest::Approx(0.5 * (0.0 + 1.0)));
  CHECK_THROWS_AS(f1_scores({0.5}, {1}, 1.5), MmfError);
}

TEST_CASE("compute_report: headline means, single-class exclusion, emitters") {
  // Task 0 has both classes, task 1 is single-class.
  std::vector<std::vector<double>> scores = {
      {0.9, 0.8}, {0.7, 0.7}, {0.2, 0.6}, {0.1, 0.5}};
  std::vector<std::vector<int>> labels = {{1, 1}, {1, 1}, {0, 1}, {0, 1}};
  MetricsReport rep =
      compute_report(scores, labels, {"task_a", "task_b"}, "deadbeef");
  CHECK(rep.per_task.size() == 2);
  CHECK(rep.per_task[0].valid);
  CHECK_FALSE(rep.per_task[1].valid);
  CHECK(rep.auroc == 1.0);  // mean over the single valid task
  CHECK(rep.n_samples == 4);
  CHECK_FALSE(rep.score_ties);  // all per-task scores distinct
  std::vector<std::vector<double>> s2 = scores;
  s2[1][0] = 0.9;
  MetricsReport rep2 =
      compute_report(s2, labels, {"task_a", "task_b"}, "deadbeef");
  CHECK(rep2.score_ties);

  const std::string json = rep.to_json_string();
  CHECK(json.find("\"config_hash\": \"deadbeef\"") != std::string::npos);
  CHECK(json.find("task_b") != std::string::npos);
  CHECK(json.find("single-class") != std::string::npos);
  const std::string txt = rep.to_text();
  CHECK(txt.find("AUROC") != std::string::npos);
  CHECK(txt.find("n/a") != std::string::npos);
  const std::string csv = rep.to_csv();
  CHECK(csv.find("label,auroc,auprc") == 0);

  // All tasks single-class -> error.
  std::vector<std::vector<int>> all_pos = {{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  CHECK_THROWS_AS(
      compute_report(scores, all_pos, {"task_a", "task_b"}, "deadbeef"),
      MmfError);
}
