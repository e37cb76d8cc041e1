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

#ifndef MMFUSE_LOSS_HPP_
#define MMFUSE_LOSS_HPP_

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Learnable per-task log-variances s_i = log sigma_i^2, initialized to 0 so
// every task starts with unit weight. Parameterizing the log guarantees
// sigma_i^2 = exp(s_i) > 0.
struct TaskUncertainty {
  Tensor s;  // {1, n_tasks}

  static TaskUncertainty create(int n_tasks) {
    TaskUncertainty u;
    u.s = Tensor::zeros({1, n_tasks}, /*requires_grad=*/true);
    return u;
  }
  int n_tasks() const { return static_cast<int>(s.size()); }
  // sigma_i^2 for reporting.
  ArrayX variances() const { return s.value().exp(); }
};

// Per-task mean binary cross-entropy over the batch, {N,T} -> {1,T}.
inline Tensor per_task_bce(const Tensor& logits, const Tensor& labels) {
  return bce_with_logits_per_task(logits, labels);
}

// Homoscedastic multi-task weighting: sum_i exp(-s_i) * L_i + s_i.
// With s = 0 this reduces exactly to the plain sum of task losses.
Tensor uncertainty_loss(const Tensor& task_losses, const TaskUncertainty& u);

}  // namespace mmfuse

#endif  // MMFUSE_LOSS_HPP_
