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

#include "mmfuse/pipeline.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/util.hpp"

namespace mmfuse {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config (de)serialization.

json task_to_json(const TaskSpec& t) {
  return {{"kind", t.kind == TaskKind::kMortality ? "mortality" : "phenotyping"},
          {"num_labels", t.num_labels},
          {"label_names", t.label_names}};
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mortality") {
    t = TaskSpec::mortality();
  } else if (kind == "phenotyping") {
    t = TaskSpec::phenotyping();
  } else {
    throw MmfError("config field task.kind: unknown value '" + kind + "'");
  }
  if (j.contains("num_labels")) t.num_labels = j["num_labels"].get<int>();
  if (j.contains("label_names")) {
    t.label_names = j["label_names"].get<std::vector<std::string>>();
  }
  if (static_cast<int>(t.label_names.size()) != t.num_labels) {
    throw MmfError("config field task.label_names: length != num_labels");
  }
  return t;
}

json hyper_to_json(const TrainHyper& h) {
  return {{"lr", h.lr},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"patience", h.patience}};
}

TrainHyper hyper_from_json(const json& j, TrainHyper h) {
  if (j.contains("lr")) h.lr = j["lr"].get<double>();
  if (j.contains("epochs")) h.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) h.batch_size = j["batch_size"].get<int>();
  if (j.contains("patience")) h.patience = j["patience"].get<int>();
  return h;
}

json config_to_json(const ExperimentConfig& c, bool for_hash) {
  json j;
  j["dataset_dir"] = c.dataset_dir;
  j["seed"] = c.seed;
  j["split_ratios"] = c.split_ratios;
  j["cohort"] = {{"n_patients", c.cohort.n_patients},
                 {"pairing_rate", c.cohort.pairing_rate},
                 {"task", task_to_json(c.cohort.task)},
                 {"signal_strength", c.cohort.signal_strength},
                 {"duration_hours", c.cohort.duration_hours},
                 {"image_size", c.cohort.image_size},
                 {"second_episode_prob", c.cohort.second_episode_prob},
                 {"label_flip_rates", c.cohort.label_flip_rates}};
  j["preprocess"] = {
      {"use_clahe", c.preprocess.use_clahe},
      {"clahe",
       {{"tile_rows", c.preprocess.clahe.tile_rows},
        {"tile_cols", c.preprocess.clahe.tile_cols},
        {"clip_limit", c.preprocess.clahe.clip_limit}}},
      {"augment",
       {{"flip_prob", c.preprocess.augment.flip_prob},
        {"rotation_deg", c.preprocess.augment.rotation_deg},
        {"scale_lo", c.preprocess.augment.scale_lo},
        {"scale_hi", c.preprocess.augment.scale_hi},
        {"shear_deg", c.preprocess.augment.shear_deg},
        {"translate_frac", c.preprocess.augment.translate_frac},
        {"resize", c.preprocess.augment.resize},
        {"crop", c.preprocess.augment.crop}}},
      {"eval_resize", c.preprocess.eval_resize},
      {"eval_crop", c.preprocess.eval_crop}};
  j["ehr"] = {{"layers", c.ehr.layers},
              {"hidden", c.ehr.hidden},
              {"dropout", c.ehr.dropout}};
  j["img"] = {{"base_channels", c.img.base_channels}};
  const char* kind = nullptr;
  switch (c.fusion.kind) {
    case FusionKind::kAttention: kind = "attention"; break;
    case FusionKind::kLstm: kind = "lstm"; break;
    case FusionKind::kEhrOnly: kind = "ehr_only"; break;
    case FusionKind::kImgOnly: kind = "img_only"; break;
  }
  j["fusion"] = {{"kind", kind},
                 {"layers", c.fusion.layers},
                 {"heads", c.fusion.heads},
                 {"ff_dim", c.fusion.ff_dim}};
  j["loss_mode"] = c.loss_mode == LossMode::kBce ? "bce" : "uncertainty";
  j["pretrain_ehr"] = hyper_to_json(c.pretrain_ehr_hyper);
  j["pretrain_img"] = hyper_to_json(c.pretrain_img_hyper);
  j["finetune"] = hyper_to_json(c.finetune_hyper);
  if (!for_hash) {
    j["out_dir"] = c.out_dir;
    j["cache_dir"] = c.cache_dir;
  }
  return j;
}

const std::vector<std::string> kKnownKeys = {
    "dataset_dir", "seed",         "split_ratios", "cohort",
    "preprocess",  "ehr",          "img",          "fusion",
    "loss_mode",   "pretrain_ehr", "pretrain_img", "finetune",
    "out_dir",     "cache_dir"};

}  // namespace

ExperimentConfig ExperimentConfig::defaults(TaskKind kind) {
  ExperimentConfig c;
  c.cohort.task =
      kind == TaskKind::kMortality ? TaskSpec::mortality() : TaskSpec::phenotyping();
  if (kind == TaskKind::kMortality) {
    c.pretrain_ehr_hyper.lr = 3e-5;
    c.pretrain_img_hyper.lr = 5e-4;
    c.finetune_hyper.lr = 1e-4;
  } else {
    c.pretrain_ehr_hyper.lr = 1e-4;
    c.pretrain_img_hyper.lr = 5e-4;
    c.finetune_hyper.lr = 7e-5;
  }
  return c;
}

std::string ExperimentConfig::config_hash() const {
  return hex64(fnv1a(config_to_json(*this, /*for_hash=*/true).dump()));
}

void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0)) throw MmfError(std::string("config field ") + field + ": must be > 0");
  };
  positive(pretrain_ehr_hyper.lr, "pretrain_ehr.lr");
  positive(pretrain_img_hyper.lr, "pretrain_img.lr");
  positive(finetune_hyper.lr, "finetune.lr");
  positive(pretrain_ehr_hyper.epochs, "pretrain_ehr.epochs");
  positive(pretrain_img_hyper.epochs, "pretrain_img.epochs");
  positive(finetune_hyper.epochs, "finetune.epochs");
  positive(finetune_hyper.batch_size, "finetune.batch_size");
  if (std::abs(split_ratios[0] + split_ratios[1] + split_ratios[2] - 1.0) > 1e-9) {
    throw MmfError("config field split_ratios: must sum to 1");
  }
  if (ehr.hidden <= 0) throw MmfError("config field ehr.hidden: must be > 0");
  if (ehr.dropout < 0 || ehr.dropout >= 1) {
    throw MmfError("config field ehr.dropout: must lie in [0,1)");
  }
  if (img.base_channels <= 0) {
    throw MmfError("config field img.base_channels: must be > 0");
  }
  if (fusion.kind == FusionKind::kAttention && ehr.hidden % fusion.heads != 0) {
    throw MmfError("config field fusion.heads: must divide ehr.hidden");
  }
  if (preprocess.augment.crop > preprocess.augment.resize) {
    throw MmfError("config field preprocess.augment.crop: exceeds resize");
  }
  if (preprocess.eval_crop > preprocess.eval_resize) {
    throw MmfError("config field preprocess.eval_crop: exceeds eval_resize");
  }
  if (out_dir.empty()) throw MmfError("config field out_dir: must be set");
}

std::string ExperimentConfig::to_json_string() const {
  return config_to_json(*this, false).dump(2);
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw MmfError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) ==
        kKnownKeys.end()) {
      throw MmfError("config field " + key + ": unknown field");
    }
  }
  ExperimentConfig c;
  try {
    if (j.contains("dataset_dir")) c.dataset_dir = j["dataset_dir"];
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("split_ratios")) {
      auto v = j["split_ratios"].get<std::vector<double>>();
      if (v.size() != 3) throw MmfError("config field split_ratios: need 3 values");
      c.split_ratios = {v[0], v[1], v[2]};
    }
    if (j.contains("cohort")) {
      const json& jc = j["cohort"];
      if (jc.contains("n_patients")) c.cohort.n_patients = jc["n_patients"];
      if (jc.contains("pairing_rate")) c.cohort.pairing_rate = jc["pairing_rate"];
      if (jc.contains("task")) c.cohort.task = task_from_json(jc["task"]);
      if (jc.contains("signal_strength")) c.cohort.signal_strength = jc["signal_strength"];
      if (jc.contains("duration_hours")) c.cohort.duration_hours = jc["duration_hours"];
      if (jc.contains("image_size")) c.cohort.image_size = jc["image_size"];
      if (jc.contains("second_episode_prob")) c.cohort.second_episode_prob = jc["second_episode_prob"];
      if (jc.contains("label_flip_rates")) {
        c.cohort.label_flip_rates = jc["label_flip_rates"].get<std::vector<double>>();
      }
    }
    if (j.contains("preprocess")) {
      const json& jp = j["preprocess"];
      if (jp.contains("use_clahe")) c.preprocess.use_clahe = jp["use_clahe"];
      if (jp.contains("clahe")) {
        const json& jcl = jp["clahe"];
        if (jcl.contains("tile_rows")) c.preprocess.clahe.tile_rows = jcl["tile_rows"];
        if (jcl.contains("tile_cols")) c.preprocess.clahe.tile_cols = jcl["tile_cols"];
        if (jcl.contains("clip_limit")) c.preprocess.clahe.clip_limit = jcl["clip_limit"];
      }
      if (jp.contains("augment")) {
        const json& ja = jp["augment"];
        AugmentParams& a = c.preprocess.augment;
        if (ja.contains("flip_prob")) a.flip_prob = ja["flip_prob"];
        if (ja.contains("rotation_deg")) a.rotation_deg = ja["rotation_deg"];
        if (ja.contains("scale_lo")) a.scale_lo = ja["scale_lo"];
        if (ja.contains("scale_hi")) a.scale_hi = ja["scale_hi"];
        if (ja.contains("shear_deg")) a.shear_deg = ja["shear_deg"];
        if (ja.contains("translate_frac")) a.translate_frac = ja["translate_frac"];
        if (ja.contains("resize")) a.resize = ja["resize"];
        if (ja.contains("crop")) a.crop = ja["crop"];
      }
      if (jp.contains("eval_resize")) c.preprocess.eval_resize = jp["eval_resize"];
      if (jp.contains("eval_crop")) c.preprocess.eval_crop = jp["eval_crop"];
    }
    if (j.contains("ehr")) {
      const json& je = j["ehr"];
      if (je.contains("layers")) c.ehr.layers = je["layers"];
      if (je.contains("hidden")) c.ehr.hidden = je["hidden"];
      if (je.contains("dropout")) c.ehr.dropout = je["dropout"];
    }
    if (j.contains("img") && j["img"].contains("base_channels")) {
      c.img.base_channels = j["img"]["base_channels"];
    }
    if (j.contains("fusion")) {
      const json& jf = j["fusion"];
      if (jf.contains("kind")) {
        const std::string kind = jf["kind"];
        if (kind == "attention") c.fusion.kind = FusionKind::kAttention;
        else if (kind == "lstm") c.fusion.kind = FusionKind::kLstm;
        else if (kind == "ehr_only") c.fusion.kind = FusionKind::kEhrOnly;
        else if (kind == "img_only") c.fusion.kind = FusionKind::kImgOnly;
        else throw MmfError("config field fusion.kind: unknown value '" + kind + "'");
      }
      if (jf.contains("layers")) c.fusion.layers = jf["layers"];
      if (jf.contains("heads")) c.fusion.heads = jf["heads"];
      if (jf.contains("ff_dim")) c.fusion.ff_dim = jf["ff_dim"];
    }
    if (j.contains("loss_mode")) {
      const std::string mode = j["loss_mode"];
      if (mode == "bce") c.loss_mode = LossMode::kBce;
      else if (mode == "uncertainty") c.loss_mode = LossMode::kUncertainty;
      else throw MmfError("config field loss_mode: unknown value '" + mode + "'");
    }
    if (j.contains("pretrain_ehr")) c.pretrain_ehr_hyper = hyper_from_json(j["pretrain_ehr"], c.pretrain_ehr_hyper);
    if (j.contains("pretrain_img")) c.pretrain_img_hyper = hyper_from_json(j["pretrain_img"], c.pretrain_img_hyper);
    if (j.contains("finetune")) c.finetune_hyper = hyper_from_json(j["finetune"], c.finetune_hyper);
    if (j.contains("out_dir")) c.out_dir = j["out_dir"];
    if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"];
  } catch (const json::exception& e) {
    throw MmfError(std::string("config parse error: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MmfError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return from_json_string(text);
}

// ---------------------------------------------------------------------------
// Experiment execution.

namespace {

struct PreparedData {
  SplitRecords raw;  // pre-standardization
};

PreparedData prepare_raw(const ExperimentConfig& c) {
  PreparedData d;
  std::vector<MultimodalRecord> records;
  if (!c.dataset_dir.empty()) {
    LoadedDataset loaded = load_dataset(c.dataset_dir);
    if (loaded.task.num_labels != c.cohort.task.num_labels) {
      throw MmfError("config field dataset_dir: task label count mismatch");
    }
    records = std::move(loaded.records);
  } else {
    records = generate_cohort(c.cohort, c.seed);
  }
  d.raw = split_by_patient(records, c.split_ratios,
                           fnv1a("split", fnv1a(hex64(c.seed))));
  return d;
}

struct StandardizedData {
  SplitRecords splits;
  NormStats stats;
};

StandardizedData standardize_splits(const SplitRecords& raw) {
  StandardizedData d;
  d.stats = fit_norm_stats(raw.train);
  auto apply = [&](const std::vector<MultimodalRecord>& in) {
    std::vector<MultimodalRecord> out = in;
    for (auto& r : out) r.series = standardize(r.series, d.stats);
    return out;
  };
  d.splits.train = apply(raw.train);
  d.splits.val = apply(raw.val);
  d.splits.test = apply(raw.test);
  return d;
}

std::string data_identity_json(const ExperimentConfig& c) {
  json j;
  j["dataset_dir"] = c.dataset_dir;
  if (c.dataset_dir.empty()) j["cohort"] = config_to_json(c, true)["cohort"];
  j["seed"] = c.seed;
  j["split_ratios"] = c.split_ratios;
  return j.dump();
}

std::string ehr_cache_key(const ExperimentConfig& c) {
  json j;
  j["data"] = data_identity_json(c);
  j["ehr"] = config_to_json(c, true)["ehr"];
  j["hyper"] = hyper_to_json(c.pretrain_ehr_hyper);
  return hex64(fnv1a(j.dump()));
}

std::string img_cache_key(const ExperimentConfig& c) {
  json j;
  j["data"] = data_identity_json(c);
  j["img"] = config_to_json(c, true)["img"];
  j["preprocess"] = config_to_json(c, true)["preprocess"];
  j["hyper"] = hyper_to_json(c.pretrain_img_hyper);
  return hex64(fnv1a(j.dump()));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MmfError("cannot write " + path.string());
  os << text;
}

// Run with already-prepared raw splits (robustness injects perturbed ones).
RunArtifact run_with_raw(const ExperimentConfig& config,
                         const SplitRecords& raw,
                         RunPhase until = RunPhase::kEvaluate) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  const std::string hash = config.config_hash();
  fs::create_directories(config.out_dir);
  const fs::path out(config.out_dir);
  write_file(out / "config.json", config.to_json_string() + "\n");

  // Resume bookkeeping: phases completed under the same config hash are
  // loaded from their checkpoints instead of re-run.
  const fs::path state_path = out / "state.json";
  json state;
  if (fs::exists(state_path)) {
    std::ifstream is(state_path);
    try {
      is >> state;
    } catch (const json::exception&) {
      state = json::object();
    }
    if (!state.contains("config_hash") || state["config_hash"] != hash) {
      state = json::object();  // stale state from another config
    }
  }
  state["config_hash"] = hash;
  auto phase_done = [&](const std::string& phase) {
    return state.contains("done") && state["done"].contains(phase) &&
           fs::exists(out / (phase + ".ckpt"));
  };
  auto mark_done = [&](const std::string& phase) {
    state["done"][phase] = true;
    write_file(state_path, state.dump(2) + "\n");
  };

  StandardizedData data = standardize_splits(raw);

  std::mt19937_64 init_rng(fnv1a("model_init", fnv1a(hex64(config.seed))));
  FusedModel model = FusedModel::create(config.ehr, config.img, config.fusion,
                                        config.preprocess,
                                        config.cohort.task.num_labels, init_rng);
  RunArtifact artifact;
  artifact.config_hash = hash;
  const FusionKind kind = config.fusion.kind;

  // --- Encoder pretraining (with optional cross-run cache). ---
  if (kind != FusionKind::kImgOnly) {
    ParamMap params;
    model.ehr.collect(params);
    BufferMap no_bufs;
    const std::string phase = "pretrain_ehr";
    const std::string key = ehr_cache_key(config);
    const fs::path cache_file = config.cache_dir.empty()
                                    ? fs::path()
                                    : fs::path(config.cache_dir) / ("ehr_" + key + ".ckpt");
    if (phase_done(phase)) {
      load_checkpoint((out / (phase + ".ckpt")).string(), params, no_bufs, hash);
    } else if (!cache_file.empty() && fs::exists(cache_file)) {
      load_checkpoint(cache_file.string(), params, no_bufs, key);
      save_checkpoint((out / (phase + ".ckpt")).string(), params, no_bufs, hash);
      mark_done(phase);
    } else {
      artifact.pretrain_ehr_result =
          pretrain_ehr(model.ehr, data.splits.train, data.splits.val,
                       config.preprocess, config.pretrain_ehr_hyper, config.seed);
      save_checkpoint((out / (phase + ".ckpt")).string(), params, no_bufs, hash);
      if (!cache_file.empty()) {
        fs::create_directories(cache_file.parent_path());
        save_checkpoint(cache_file.string(), params, no_bufs, key);
      }
      mark_done(phase);
    }
  }
  if (kind != FusionKind::kEhrOnly) {
    ParamMap params;
    BufferMap bufs;
    model.img.collect(params, bufs);
    const std::string phase = "pretrain_img";
    const std::string key = img_cache_key(config);
    const fs::path cache_file = config.cache_dir.empty()
                                    ? fs::path()
                                    : fs::path(config.cache_dir) / ("img_" + key + ".ckpt");
    if (phase_done(phase)) {
      load_checkpoint((out / (phase + ".ckpt")).string(), params, bufs, hash);
    } else if (!cache_file.empty() && fs::exists(cache_file)) {
      load_checkpoint(cache_file.string(), params, bufs, key);
      save_checkpoint((out / (phase + ".ckpt")).string(), params, bufs, hash);
      mark_done(phase);
    } else {
      artifact.pretrain_img_result =
          pretrain_img(model.img, data.splits.train, data.splits.val,
                       config.preprocess, config.pretrain_img_hyper, config.seed);
      save_checkpoint((out / (phase + ".ckpt")).string(), params, bufs, hash);
      if (!cache_file.empty()) {
        fs::create_directories(cache_file.parent_path());
        save_checkpoint(cache_file.string(), params, bufs, key);
      }
      mark_done(phase);
    }
  }

  if (until == RunPhase::kPretrain) {
    artifact.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return artifact;
  }

  // --- Joint fine-tuning. ---
  {
    ParamMap params;
    BufferMap bufs;
    model.collect(params, bufs, config.loss_mode);
    const std::string phase = "finetune";
    if (phase_done(phase)) {
      load_checkpoint((out / (phase + ".ckpt")).string(), params, bufs, hash);
    } else {
      artifact.finetune_result =
          finetune(model, data.splits.train, data.splits.val, config.loss_mode,
                   config.finetune_hyper, config.seed);
      save_checkpoint((out / (phase + ".ckpt")).string(), params, bufs, hash);
      mark_done(phase);
    }
    artifact.checkpoint_path = (out / (phase + ".ckpt")).string();
  }
  if (until == RunPhase::kFinetune) {
    artifact.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return artifact;
  }

  artifact.test_report = evaluate(model, data.splits.test,
                                  config.cohort.task.label_names, hash);
  emit_report_files(artifact.test_report, config.out_dir, "metrics");
  artifact.metrics_json_path = (out / "metrics.json").string();
  state["done"]["evaluate"] = true;
  write_file(state_path, state.dump(2) + "\n");
  artifact.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return artifact;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

RunArtifact run_experiment(const ExperimentConfig& config, RunPhase until) {
  config.validate();
  return run_with_raw(config, prepare_raw(config).raw, until);
}

void emit_report_files(const MetricsReport& report, const std::string& out_dir,
                       const std::string& stem) {
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / (stem + ".json"), report.to_json_string() + "\n");
  write_file(fs::path(out_dir) / (stem + ".csv"), report.to_csv());
  write_file(fs::path(out_dir) / (stem + ".txt"), report.to_text());
}

AblationResult run_ablation(const ExperimentConfig& base) {
  base.validate();
  struct RowSpec {
    const char* name;
    FusionKind kind;
    LossMode loss;
    bool clahe;
  };
  const RowSpec specs[] = {
      {"Time series only", FusionKind::kEhrOnly, LossMode::kBce, false},
      {"Image only", FusionKind::kImgOnly, LossMode::kBce, false},
      {"Multimodal LSTM Fusion", FusionKind::kLstm, LossMode::kBce, false},
      {"Multimodal Attention", FusionKind::kAttention, LossMode::kBce, false},
      {"Attention + Uncertainty Loss", FusionKind::kAttention,
       LossMode::kUncertainty, false},
      {"Attention + CLAHE", FusionKind::kAttention, LossMode::kBce, true},
      {"Attention + Uncertainty + CLAHE", FusionKind::kAttention,
       LossMode::kUncertainty, true},
  };
  AblationResult result;
  const fs::path out(base.out_dir);
  std::string cache = base.cache_dir.empty() ? (out / "cache").string()
                                             : base.cache_dir;
  int row_id = 0;
  for (const RowSpec& spec : specs) {
    ExperimentConfig c = base;
    c.fusion.kind = spec.kind;
    c.loss_mode = spec.loss;
    c.preprocess.use_clahe = spec.clahe;
    c.out_dir = (out / ("row_" + std::to_string(row_id++))).string();
    c.cache_dir = cache;
    AblationRow row;
    row.name = spec.name;
    try {
      row.report = run_experiment(c).test_report;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  // Four-metric table in the ablation layout.
  std::string text, csv;
  char line[256];
  std::snprintf(line, sizeof(line), "%-34s %-12s %-10s %-8s %-8s\n", "Model",
                "MacroAvgF1", "BinaryF1", "AUROC", "AUPRC");
  text += line;
  csv += "model,macro_f1,binary_f1,auroc,auprc\n";
  for (const auto& row : result.rows) {
    if (row.ok) {
      std::snprintf(line, sizeof(line), "%-34s %-12s %-10s %-8s %-8s\n",
                    row.name.c_str(), fmt3(row.report.macro_f1).c_str(),
                    fmt3(row.report.binary_f1).c_str(),
                    fmt3(row.report.auroc).c_str(),
                    fmt3(row.report.auprc).c_str());
      csv += "\"" + row.name + "\"," + fmt3(row.report.macro_f1) + "," +
             fmt3(row.report.binary_f1) + "," + fmt3(row.report.auroc) + "," +
             fmt3(row.report.auprc) + "\n";
    } else {
      std::snprintf(line, sizeof(line), "%-34s %-12s %-10s %-8s %-8s\n",
                    row.name.c_str(), "-", "-", "-", "-");
      csv += "\"" + row.name + "\",,,,\n";
    }
    text += line;
  }
  result.table_text = text;
  result.table_csv = csv;
  write_file(out / "ablation.txt", text);
  write_file(out / "ablation.csv", csv);

  // Per-task uncertainty comparison (last two rows), per-task-table format.
  const AblationRow& no_unc = result.rows[5];
  const AblationRow& unc = result.rows[6];
  if (no_unc.ok && unc.ok) {
    std::string pt = "label,auroc_uncertainty,auprc_uncertainty,auroc_plain,auprc_plain\n";
    for (size_t t = 0; t < unc.report.per_task.size(); ++t) {
      const auto& a = unc.report.per_task[t];
      const auto& b = no_unc.report.per_task[t];
      pt += "\"" + a.label_name + "\",";
      pt += a.valid ? fmt3(a.auroc) + "," + fmt3(a.auprc) : std::string(",");
      pt += ",";
      pt += b.valid ? fmt3(b.auroc) + "," + fmt3(b.auprc) : std::string(",");
      pt += "\n";
    }
    write_file(out / "uncertainty_per_task.csv", pt);
  }
  return result;
}

RobustnessResult run_robustness(const ExperimentConfig& base,
                                const std::vector<double>& p_values,
                                bool train_clean, bool train_noisy) {
  base.validate();
  PreparedData data = prepare_raw(base);
  std::mt19937_64 noise_rng(fnv1a("noise_est", fnv1a(hex64(base.seed))));
  std::vector<MultimodalRecord> all = data.raw.train;
  all.insert(all.end(), data.raw.val.begin(), data.raw.val.end());
  NoiseSpec spec = estimate_noise_params(all, kNoiseEstimationN, noise_rng);

  const fs::path out(base.out_dir);
  fs::create_directories(out);
  RobustnessResult result;

  struct ModelSpec {
    const char* name;
    FusionKind kind;
  };
  const ModelSpec models[] = {{"attention", FusionKind::kAttention},
                              {"lstm_fusion", FusionKind::kLstm}};
  for (const ModelSpec& m : models) {
    ExperimentConfig c = base;
    c.fusion.kind = m.kind;
    c.cache_dir = base.cache_dir.empty() ? (out / "cache").string() : base.cache_dir;

    if (train_clean) {
      ExperimentConfig cc = c;
      cc.out_dir = (out / (std::string(m.name) + "_clean")).string();
      RunArtifact clean_run = run_with_raw(cc, data.raw);
      // Reload the trained model once, evaluate each perturbed test set.
      std::mt19937_64 init_rng(fnv1a("model_init", fnv1a(hex64(cc.seed))));
      FusedModel model = FusedModel::create(cc.ehr, cc.img, cc.fusion,
                                            cc.preprocess,
                                            cc.cohort.task.num_labels, init_rng);
      ParamMap params;
      BufferMap bufs;
      model.collect(params, bufs, cc.loss_mode);
      load_checkpoint(clean_run.checkpoint_path, params, bufs, cc.config_hash());
      NormStats stats = fit_norm_stats(data.raw.train);
      for (double p : p_values) {
        NoiseSpec sp = spec;
        sp.fraction = p;
        auto noisy_test = perturb_all(data.raw.test, sp,
                                      fnv1a("test_noise", fnv1a(hex64(base.seed))));
        for (auto& r : noisy_test) r.series = standardize(r.series, stats);
        RobustnessCell cell;
        cell.model = m.name;
        cell.mode = "train_clean";
        cell.p = p;
        cell.report = evaluate(model, noisy_test, cc.cohort.task.label_names,
                               cc.config_hash());
        char stem[64];
        std::snprintf(stem, sizeof(stem), "%s_train_clean_p%02d", m.name,
                      static_cast<int>(std::lround(p * 100)));
        emit_report_files(cell.report, (out / "cells").string(), stem);
        result.cells.push_back(std::move(cell));
      }
    }
    if (train_noisy) {
      for (double p : p_values) {
        NoiseSpec sp = spec;
        sp.fraction = p;
        const uint64_t pseed = fnv1a("train_noise", fnv1a(hex64(base.seed)));
        SplitRecords noisy;
        noisy.train = perturb_all(data.raw.train, sp, pseed);
        noisy.val = perturb_all(data.raw.val, sp, pseed);
        noisy.test = perturb_all(data.raw.test, sp, pseed);
        ExperimentConfig cn = c;
        char dir[64];
        std::snprintf(dir, sizeof(dir), "%s_noisy_p%02d", m.name,
                      static_cast<int>(std::lround(p * 100)));
        cn.out_dir = (out / dir).string();
        cn.cache_dir.clear();  // noisy data must not reuse clean encoders
        RobustnessCell cell;
        cell.model = m.name;
        cell.mode = "train_noisy";
        cell.p = p;
        cell.report = run_with_raw(cn, noisy).test_report;
        emit_report_files(cell.report, (out / "cells").string(), dir);
        result.cells.push_back(std::move(cell));
      }
    }
  }

  // Noise-table layout: model, noise %, then the four metric columns.
  std::string text, csv;
  char line[256];
  for (const char* mode : {"train_noisy", "train_clean"}) {
    bool any = false;
    for (const auto& cell : result.cells) any |= cell.mode == mode;
    if (!any) continue;
    text += std::string("mode: ") + mode + "\n";
    std::snprintf(line, sizeof(line), "%-12s %-8s %-8s %-8s %-12s %-10s\n",
                  "Model", "Noise%", "AUROC", "AUPRC", "MacroAvgF1",
                  "BinaryF1");
    text += line;
    for (const auto& cell : result.cells) {
      if (cell.mode != mode) continue;
      std::snprintf(line, sizeof(line), "%-12s %-8d %-8s %-8s %-12s %-10s\n",
                    cell.model.c_str(), static_cast<int>(std::lround(cell.p * 100)),
                    fmt3(cell.report.auroc).c_str(),
                    fmt3(cell.report.auprc).c_str(),
                    fmt3(cell.report.macro_f1).c_str(),
                    fmt3(cell.report.binary_f1).c_str());
      text += line;
    }
    text += "\n";
  }
  csv = "model,mode,noise_pct,auroc,auprc,macro_f1,binary_f1\n";
  for (const auto& cell : result.cells) {
    csv += cell.model + "," + cell.mode + "," +
           std::to_string(static_cast<int>(std::lround(cell.p * 100))) + "," +
           fmt3(cell.report.auroc) + "," + fmt3(cell.report.auprc) + "," +
           fmt3(cell.report.macro_f1) + "," + fmt3(cell.report.binary_f1) + "\n";
  }
  result.table_text = text;
  result.table_csv = csv;

  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> curves;
  for (const ModelSpec& m : models) {
    for (const char* mode : {"train_clean", "train_noisy"}) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& cell : result.cells) {
        if (cell.model == m.name && cell.mode == mode) {
          pts.emplace_back(cell.p, cell.report.auroc);
        }
      }
      if (!pts.empty()) {
        curves.emplace_back(std::string(m.name) + " (" + mode + ")", pts);
      }
    }
  }
  result.svg = render_line_svg(curves, "noise fraction p", "AUROC");
  write_file(out / "robustness.txt", text);
  write_file(out / "robustness.csv", csv);
  write_file(out / "robustness.svg", result.svg);
  return result;
}

std::string render_line_svg(
    const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
        curves,
    const std::string& x_label, const std::string& y_label) {
  const int w = 640, h = 480, ml = 60, mr = 160, mt = 20, mb = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& [name, pts] : curves) {
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x); x1 = std::max(x1, x);
      y0 = std::min(y0, y); y1 = std::max(y1, y);
    }
  }
  if (x0 > x1) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-12) { y0 -= 0.05; y1 += 0.05; }
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return mt + ph - (y - y0) / (y1 - y0) * ph; };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};
  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" "
                "height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                w, h, w, h);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, mt + static_cast<int>(ph), ml + static_cast<int>(pw),
                mt + static_cast<int>(ph));
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, mt, ml, mt + static_cast<int>(ph));
  svg += buf;
  // Axis ticks at the extremes.
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">%.2f</text>\n"
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">%.2f</text>\n",
                ml - 5, mt + static_cast<int>(ph) + 15, x0,
                ml + static_cast<int>(pw) - 15, mt + static_cast<int>(ph) + 15, x1);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">%.3f</text>\n"
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">%.3f</text>\n",
                5, mt + static_cast<int>(ph), y0, 5, mt + 10, y1);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"13\">%s</text>\n",
                ml + static_cast<int>(pw) / 2 - 40, h - 10, x_label.c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"15\" y=\"%d\" font-size=\"13\" "
                "transform=\"rotate(-90 15 %d)\">%s</text>\n",
                mt + static_cast<int>(ph) / 2, mt + static_cast<int>(ph) / 2,
                y_label.c_str());
  svg += buf;
  int ci = 0;
  for (const auto& [name, pts] : curves) {
    const char* color = colors[ci % 6];
    std::string path;
    for (size_t i = 0; i < pts.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "",
                    px(pts[i].first), py(pts[i].second));
      path += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" "
                  "stroke-width=\"2\"/>\n",
                  path.c_str(), color);
    svg += buf;
    for (const auto& [x, y] : pts) {
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n",
                    px(x), py(y), color);
      svg += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%d\" width=\"12\" height=\"12\" fill=\"%s\"/>\n"
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\">%s</text>\n",
                  w - mr + 10, mt + 20 * ci, color, w - mr + 28,
                  mt + 20 * ci + 10, name.c_str());
    svg += buf;
    ++ci;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mmfuse
