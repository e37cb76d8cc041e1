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

#include "mmfuse/loss.hpp"

namespace mmfuse {

Tensor uncertainty_loss(const Tensor& task_losses, const TaskUncertainty& u) {
  if (task_losses.size() != u.s.size()) {
    throw MmfError("uncertainty_loss: " + std::to_string(task_losses.size()) +
                   " task losses vs " + std::to_string(u.s.size()) +
                   " uncertainty parameters");
  }
  Tensor weighted = mul(exp_(scale(u.s, -1.0)), task_losses);
  return sum_all(add(weighted, u.s));
}

}  // namespace mmfuse
