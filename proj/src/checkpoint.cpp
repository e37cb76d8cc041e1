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

#include "mmfuse/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace mmfuse {

namespace {

constexpr char kMagic[] = "MMFCKPT1";

nlohmann::json read_manifest(std::ifstream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::string(magic, 8) != kMagic) {
    throw MmfError("checkpoint: bad magic in " + path);
  }
  uint64_t manifest_len = 0;
  is.read(reinterpret_cast<char*>(&manifest_len), 8);
  if (!is) throw MmfError("checkpoint: truncated header in " + path);
  std::string text(manifest_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(manifest_len));
  if (!is) throw MmfError("checkpoint: truncated manifest in " + path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MmfError("checkpoint: corrupt manifest in " + path + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params,
                     const BufferMap& bufs, const std::string& config_hash) {
  nlohmann::json manifest;
  manifest["config_hash"] = config_hash;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, p] : params) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", p.shape()}, {"kind", "param"}});
  }
  for (const auto& [name, b] : bufs) {
    manifest["tensors"].push_back(
        {{"name", name},
         {"shape", std::vector<int>{1, static_cast<int>(b->size())}},
         {"kind", "buffer"}});
  }
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MmfError("checkpoint: cannot write " + path);
  os.write(kMagic, 8);
  const uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, p] : params) {
    os.write(reinterpret_cast<const char*>(p.value().data()),
             static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  for (const auto& [name, b] : bufs) {
    os.write(reinterpret_cast<const char*>(b->data()),
             static_cast<std::streamsize>(b->size() * sizeof(double)));
  }
  if (!os) throw MmfError("checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ParamMap& params,
                     BufferMap& bufs, const std::string& expected_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MmfError("checkpoint: cannot open " + path);
  nlohmann::json manifest = read_manifest(is, path);
  const std::string stored = manifest["config_hash"].get<std::string>();
  if (stored != expected_hash) {
    throw MmfError("checkpoint: config hash mismatch (stored " + stored +
                   ", expected " + expected_hash + ") in " + path);
  }
  size_t seen = 0;
  for (const auto& entry : manifest["tensors"]) {
    const std::string name = entry["name"].get<std::string>();
    const std::string kind = entry["kind"].get<std::string>();
    const auto shape = entry["shape"].get<std::vector<int>>();
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (kind == "param") {
      auto it = params.find(name);
      if (it == params.end()) {
        throw MmfError("checkpoint: unknown tensor " + name + " in " + path);
      }
      if (it->second.shape() != Shape(shape.begin(), shape.end())) {
        throw MmfError("checkpoint: shape mismatch for " + name + " in " + path);
      }
      is.read(reinterpret_cast<char*>(it->second.value().data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      auto it = bufs.find(name);
      if (it == bufs.end()) {
        throw MmfError("checkpoint: unknown buffer " + name + " in " + path);
      }
      if (static_cast<int64_t>(it->second->size()) != n) {
        throw MmfError("checkpoint: size mismatch for buffer " + name);
      }
      is.read(reinterpret_cast<char*>(it->second->data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    }
    if (!is) throw MmfError("checkpoint: truncated tensor data in " + path);
    ++seen;
  }
  if (seen != params.size() + bufs.size()) {
    throw MmfError("checkpoint: " + path + " is missing tensors (" +
                   std::to_string(seen) + " of " +
                   std::to_string(params.size() + bufs.size()) + ")");
  }
}

std::string checkpoint_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MmfError("checkpoint: cannot open " + path);
  return read_manifest(is, path)["config_hash"].get<std::string>();
}

}  // namespace mmfuse
