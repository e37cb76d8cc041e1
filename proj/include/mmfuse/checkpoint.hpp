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

#ifndef MMFUSE_CHECKPOINT_HPP_
#define MMFUSE_CHECKPOINT_HPP_

#include <string>

#include "mmfuse/nn.hpp"

namespace mmfuse {

// Single-file container: a JSON manifest (names, shapes, config hash)
// followed by the raw little-endian doubles of every tensor and buffer in
// manifest order.
void save_checkpoint(const std::string& path, const ParamMap& params,
                     const BufferMap& bufs, const std::string& config_hash);

// Loads values in place. Refuses on config-hash mismatch, unknown or missing
// tensor names, or shape/size disagreement.
void load_checkpoint(const std::string& path, ParamMap& params,
                     BufferMap& bufs, const std::string& expected_hash);

// The config hash stored in a checkpoint, without loading tensors.
std::string checkpoint_hash(const std::string& path);

}  // namespace mmfuse

#endif  // MMFUSE_CHECKPOINT_HPP_
