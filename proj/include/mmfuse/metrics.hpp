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

#ifndef MMFUSE_METRICS_HPP_
#define MMFUSE_METRICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Mann-Whitney AUROC: fraction of (positive, negative) pairs where the
// positive outscores the negative, ties credited 0.5. O(n log n) via rank
// sums. Throws MmfError if only one class is present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision with step interpolation, descending score order, ties
// broken by stable original order. Throws MmfError if there are no positives.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct F1Pair {
  double binary_f1 = 0.0;  // positive-class F1
  double macro_f1 = 0.0;   // mean of positive- and negative-class F1
};

// Thresholded F1; zero-denominator F1 is defined as 0.
F1Pair f1_scores(const std::vector<double>& scores,
                 const std::vector<int>& labels, double threshold = 0.5);

struct TaskMetrics {
  std::string label_name;
  bool valid = true;  // false when the task was single-class in this split
  double auroc = 0.0;
  double auprc = 0.0;
};

struct MetricsReport {
  double macro_f1 = 0.0;
  double binary_f1 = 0.0;
  double auroc = 0.0;  // unweighted mean over valid tasks
  double auprc = 0.0;
  std::vector<TaskMetrics> per_task;
  int n_samples = 0;
  std::string config_hash;
  bool score_ties = false;  // any exact score ties encountered
  // Interpretation notes are embedded in every emitted report.
  std::string to_json_string() const;
  std::string to_text() const;   // aligned columns, headline + per-task
  std::string to_csv() const;    // per-task rows
  // Inverse of to_json_string; round trips exactly (doubles survive dump).
  static MetricsReport from_json_string(const std::string& text);
};

// scores[i][t] / labels[i][t]: sample i, task t. Single-class tasks become
// invalid per_task entries and are excluded from the headline means.
MetricsReport compute_report(const std::vector<std::vector<double>>& scores,
                             const std::vector<std::vector<int>>& labels,
                             const std::vector<std::string>& label_names,
                             const std::string& config_hash,
                             double threshold = 0.5);

}  // namespace mmfuse

#endif  // MMFUSE_METRICS_HPP_
