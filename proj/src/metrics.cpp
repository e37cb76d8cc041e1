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

#include "mmfuse/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmfuse {

namespace {

void check_sizes(const std::vector<double>& scores,
                 const std::vector<int>& labels, const char* op) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw MmfError(std::string(op) + ": size mismatch or empty input");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw MmfError(std::string(op) + ": non-binary label");
  }
}

}  // namespace

double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_sizes(scores, labels, "auroc");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MmfError("auroc: undefined for single-class input");
  }
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // Average ranks across tied groups, then the Mann-Whitney U statistic.
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) rank_sum_pos += rank[k];
  }
  const double u =
      rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_sizes(scores, labels, "auprc");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  if (n_pos == 0) throw MmfError("auprc: undefined with zero positives");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return scores[a] > scores[b];
  });
  double ap = 0.0;
  size_t tp = 0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[idx[k]] == 1) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

F1Pair f1_scores(const std::vector<double>& scores,
                 const std::vector<int>& labels, double threshold) {
  check_sizes(scores, labels, "f1_scores");
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw MmfError("f1_scores: threshold must be in (0,1)");
  }
  size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    else if (pred) ++fp;
    else if (labels[i] == 1) ++fn;
    else ++tn;
  }
  auto f1 = [](size_t tp_, size_t fp_, size_t fn_) {
    const double denom = 2.0 * tp_ + fp_ + fn_;
    return denom == 0.0 ? 0.0 : 2.0 * tp_ / denom;
  };
  F1Pair out;
  out.binary_f1 = f1(tp, fp, fn);
  const double f1_neg = f1(tn, fn, fp);  // negative class: swap roles
  out.macro_f1 = 0.5 * (out.binary_f1 + f1_neg);
  return out;
}

MetricsReport compute_report(const std::vector<std::vector<double>>& scores,
                             const std::vector<std::vector<int>>& labels,
                             const std::vector<std::string>& label_names,
                             const std::string& config_hash,
                             double threshold) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw MmfError("compute_report: empty or mismatched inputs");
  }
  const size_t n_tasks = scores[0].size();
  if (label_names.size() != n_tasks) {
    throw MmfError("compute_report: label_names length != task count");
  }
  MetricsReport rep;
  rep.n_samples = static_cast<int>(scores.size());
  rep.config_hash = config_hash;
  double sum_auroc = 0, sum_auprc = 0, sum_bf1 = 0, sum_mf1 = 0;
  int valid = 0;
  for (size_t t = 0; t < n_tasks; ++t) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][t];
      y[i] = labels[i][t];
    }
    {
      std::vector<double> sorted = s;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        rep.score_ties = true;
      }
    }
    TaskMetrics tm;
    tm.label_name = label_names[t];
    try {
      tm.auroc = auroc(s, y);
      tm.auprc = auprc(s, y);
    } catch (const MmfError&) {
      tm.valid = false;  // single-class task in this split
    }
    if (tm.valid) {
      F1Pair f = f1_scores(s, y, threshold);
      sum_bf1 += f.binary_f1;
      sum_mf1 += f.macro_f1;
      sum_auroc += tm.auroc;
      sum_auprc += tm.auprc;
      ++valid;
    }
    rep.per_task.push_back(std::move(tm));
  }
  if (valid == 0) throw MmfError("compute_report: no task has both classes");
  rep.auroc = sum_auroc / valid;
  rep.auprc = sum_auprc / valid;
  rep.binary_f1 = sum_bf1 / valid;
  rep.macro_f1 = sum_mf1 / valid;
  return rep;
}

std::string MetricsReport::to_json_string() const {
  nlohmann::json j;
  j["macro_f1"] = macro_f1;
  j["binary_f1"] = binary_f1;
  j["auroc"] = auroc;
  j["auprc"] = auprc;
  j["n_samples"] = n_samples;
  j["config_hash"] = config_hash;
  j["score_ties"] = score_ties;
  j["notes"] = {
      {"macro_f1", "mean of positive- and negative-class F1, then over tasks"},
      {"binary_f1", "positive-class F1, averaged over tasks"},
      {"headline_auroc_auprc", "unweighted mean over valid tasks"},
  };
  j["per_task"] = nlohmann::json::array();
  for (const auto& t : per_task) {
    nlohmann::json row;
    row["label"] = t.label_name;
    if (t.valid) {
      row["auroc"] = t.auroc;
      row["auprc"] = t.auprc;
    } else {
      row["auroc"] = nullptr;
      row["auprc"] = nullptr;
      row["warning"] = "single-class in this split; excluded from means";
    }
    j["per_task"].push_back(row);
  }
  return j.dump(2);
}

MetricsReport MetricsReport::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MmfError(std::string("metrics parse error: ") + e.what());
  }
  MetricsReport r;
  try {
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.binary_f1 = j.at("binary_f1").get<double>();
    r.auroc = j.at("auroc").get<double>();
    r.auprc = j.at("auprc").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.score_ties = j.at("score_ties").get<bool>();
    for (const auto& row : j.at("per_task")) {
      TaskMetrics t;
      t.label_name = row.at("label").get<std::string>();
      t.valid = !row.at("auroc").is_null();
      if (t.valid) {
        t.auroc = row.at("auroc").get<double>();
        t.auprc = row.at("auprc").get<double>();
      }
      r.per_task.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw MmfError(std::string("metrics parse error: ") + e.what());
  }
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %-12s %-12s %-8s %-8s\n", "",
                "MacroAvgF1", "BinaryF1", "AUROC", "AUPRC");
  os << line;
  std::snprintf(line, sizeof(line), "%-22s %-12.3f %-12.3f %-8.3f %-8.3f\n",
                "headline", macro_f1, binary_f1, auroc, auprc);
  os << line;
  if (per_task.size() > 1) {
    os << "\nper-task breakdown:\n";
    std::snprintf(line, sizeof(line), "%-58s %-8s %-8s\n", "label", "AUROC",
                  "AUPRC");
    os << line;
    for (const auto& t : per_task) {
      if (t.valid) {
        std::snprintf(line, sizeof(line), "%-58s %-8.3f %-8.3f\n",
                      t.label_name.c_str(), t.auroc, t.auprc);
      } else {
        std::snprintf(line, sizeof(line), "%-58s %-8s %-8s\n",
                      t.label_name.c_str(), "n/a", "n/a");
      }
      os << line;
    }
  }
  return os.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "label,auroc,auprc\n";
  for (const auto& t : per_task) {
    os << '"' << t.label_name << '"' << ',';
    if (t.valid) {
      os << t.auroc << ',' << t.auprc;
    } else {
      os << ',';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mmfuse
