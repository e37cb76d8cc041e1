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

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmfuse/data.hpp"

namespace mmfuse {

namespace {

constexpr int kManifestVersion = 1;
namespace fs = std::filesystem;

void write_series_csv(const DiscretizedSeries& s, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw MmfError("save_dataset: cannot write " + path.string());
  const auto names = ChannelSchema::standard().channel_names();
  for (size_t i = 0; i < names.size(); ++i) {
    os << names[i] << (i + 1 < names.size() ? ',' : '\n');
  }
  char buf[40];
  for (int b = 0; b < s.t; ++b) {
    for (int c = 0; c < ChannelSchema::kTotalChannels; ++c) {
      // %.17g round-trips doubles exactly.
      std::snprintf(buf, sizeof(buf), "%.17g", s.at(b, c));
      os << buf << (c + 1 < ChannelSchema::kTotalChannels ? ',' : '\n');
    }
  }
}

DiscretizedSeries read_series_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw MmfError("load_dataset: missing series file " + path.string());
  std::string line;
  if (!std::getline(is, line)) {
    throw MmfError("load_dataset: empty series file " + path.string());
  }
  DiscretizedSeries s;
  while (std::getline(is, line)) {
    size_t pos = 0;
    int cols = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      s.values.push_back(std::stod(line.substr(pos, comma - pos)));
      pos = comma + 1;
      ++cols;
    }
    if (cols != ChannelSchema::kTotalChannels) {
      throw MmfError("load_dataset: wrong column count in " + path.string());
    }
    ++s.t;
  }
  if (s.t == 0) throw MmfError("load_dataset: no rows in " + path.string());
  return s;
}

}  // namespace

void save_dataset(const std::vector<MultimodalRecord>& records,
                  const TaskSpec& task, uint64_t seed, const std::string& dir) {
  if (records.empty()) throw MmfError("save_dataset: no records");
  fs::create_directories(fs::path(dir) / "series");
  fs::create_directories(fs::path(dir) / "images");
  nlohmann::json manifest;
  manifest["version"] = kManifestVersion;
  manifest["seed"] = seed;
  manifest["task"] = {
      {"kind", task.kind == TaskKind::kMortality ? "mortality" : "phenotyping"},
      {"num_labels", task.num_labels},
      {"label_names", task.label_names},
  };
  manifest["records"] = nlohmann::json::array();
  for (const auto& r : records) {
    const std::string series_rel = "series/" + r.episode_id + ".csv";
    write_series_csv(r.series, fs::path(dir) / series_rel);
    nlohmann::json entry;
    entry["patient_id"] = r.patient_id;
    entry["episode_id"] = r.episode_id;
    entry["series"] = series_rel;
    entry["labels"] = r.labels;
    if (r.image.has_value()) {
      const std::string img_rel = "images/" + r.episode_id + ".pgm";
      write_pgm(*r.image, (fs::path(dir) / img_rel).string());
      entry["image"] = img_rel;
    } else {
      entry["image"] = nullptr;
    }
    manifest["records"].push_back(entry);
  }
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw MmfError("save_dataset: cannot write manifest in " + dir);
  os << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw MmfError("load_dataset: no manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw MmfError("load_dataset: corrupt manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("version") ||
      manifest["version"].get<int>() != kManifestVersion) {
    throw MmfError("load_dataset: unsupported manifest version in " + dir);
  }
  LoadedDataset out;
  out.seed = manifest["seed"].get<uint64_t>();
  const auto& jt = manifest["task"];
  out.task.kind = jt["kind"].get<std::string>() == "mortality"
                      ? TaskKind::kMortality
                      : TaskKind::kPhenotyping;
  out.task.num_labels = jt["num_labels"].get<int>();
  out.task.label_names = jt["label_names"].get<std::vector<std::string>>();
  for (const auto& entry : manifest["records"]) {
    MultimodalRecord r;
    r.patient_id = entry["patient_id"].get<std::string>();
    r.episode_id = entry["episode_id"].get<std::string>();
    r.series = read_series_csv(fs::path(dir) /
                               entry["series"].get<std::string>());
    r.labels = entry["labels"].get<std::vector<int>>();
    if (!entry["image"].is_null()) {
      r.image = read_pgm((fs::path(dir) / entry["image"].get<std::string>()).string());
    }
    if (static_cast<int>(r.labels.size()) != out.task.num_labels) {
      throw MmfError("load_dataset: label length mismatch for " + r.episode_id);
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace mmfuse
