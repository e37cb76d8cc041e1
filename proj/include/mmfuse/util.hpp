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

#ifndef MMFUSE_UTIL_HPP_
#define MMFUSE_UTIL_HPP_

#include <cstdint>
#include <string>
#include <string_view>

namespace mmfuse {

// FNV-1a, used wherever a stable cross-platform hash is needed (split
// assignment, per-record rng streams, config fingerprints). std::hash is
// implementation-defined and would break run reproducibility across builds.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 14695981039346656037ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = d[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace mmfuse

#endif  // MMFUSE_UTIL_HPP_
