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

#include "mmfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mmfuse/util.hpp"

namespace mmfuse {

EhrEncoder EhrEncoder::create(const EhrEncoderConfig& cfg, int num_labels,
                              std::mt19937_64& rng) {
  if (cfg.hidden <= 0 || cfg.layers <= 0 || cfg.dropout < 0 ||
      cfg.dropout >= 1) {
    throw MmfError("ehr encoder config: invalid hidden/layers/dropout");
  }
  EhrEncoder e;
  e.cfg = cfg;
  e.lstm = LSTMStack::create(ChannelSchema::kTotalChannels, cfg.hidden,
                             cfg.layers, cfg.dropout, rng);
  e.classifier = LinearLayer::create(cfg.hidden, num_labels, rng);
  return e;
}

Tensor EhrEncoder::encode(const std::vector<Tensor>& steps, bool train,
                          std::mt19937_64& rng) const {
  if (steps.empty()) throw MmfError("ehr_encode: empty sequence");
  if (steps[0].cols() != ChannelSchema::kTotalChannels) {
    throw MmfError("ehr_encode: series width " +
                   std::to_string(steps[0].cols()) + ", expected 76");
  }
  return lstm.forward(steps, train, rng);
}

void EhrEncoder::collect(ParamMap& params) {
  lstm.collect("ehr.lstm", params);
  classifier.collect("ehr.classifier", params);
}

ImgEncoder ImgEncoder::create(const ImgEncoderConfig& cfg, int num_labels,
                              std::mt19937_64& rng) {
  if (cfg.base_channels <= 0) {
    throw MmfError("img encoder config: base_channels must be positive");
  }
  ImgEncoder e;
  e.cfg = cfg;
  e.backbone = ResNet34::create(cfg.base_channels, rng);
  e.classifier = LinearLayer::create(e.backbone.feature_dim, num_labels, rng);
  return e;
}

Tensor ImgEncoder::encode(const Tensor& images, bool train) {
  return backbone.features(images, train);
}

void ImgEncoder::collect(ParamMap& params, BufferMap& bufs) {
  backbone.collect("img.backbone", params, bufs);
  classifier.collect("img.classifier", params);
}

FusionHead FusionHead::create(const FusionConfig& cfg, int dim, int d_img,
                              int num_labels, std::mt19937_64& rng) {
  if (cfg.kind == FusionKind::kAttention && dim % cfg.heads != 0) {
    throw MmfError("fusion config: model dim not divisible by heads");
  }
  FusionHead f;
  f.cfg = cfg;
  f.dim = dim;
  f.projection = LinearLayer::create(d_img, dim, rng);
  if (cfg.kind == FusionKind::kAttention) {
    f.encoder =
        TransformerEncoder::create(dim, cfg.heads, cfg.ff_dim, cfg.layers, rng);
  } else if (cfg.kind == FusionKind::kLstm) {
    f.rnn = LSTMStack::create(dim, dim, 1, 0.0, rng);
  }
  f.classifier = LinearLayer::create(dim, num_labels, rng);
  f.missing_token = Tensor::randn({1, dim}, rng, 0.02, true);
  return f;
}

Tensor FusionHead::project(const Tensor& f_cxr_raw) const {
  return projection.forward(f_cxr_raw);
}

Tensor FusionHead::logits(const Tensor& f_ehr, const Tensor& f_cxr) const {
  switch (cfg.kind) {
    case FusionKind::kEhrOnly:
      return classifier.forward(f_ehr);
    case FusionKind::kImgOnly:
      return classifier.forward(f_cxr);
    case FusionKind::kLstm: {
      // The baseline consumes the tokens as a length-2 sequence.
      std::mt19937_64 unused(0);  // rnn has no dropout
      return classifier.forward(
          rnn.forward({f_ehr, f_cxr}, /*train=*/false, unused));
    }
    case FusionKind::kAttention: {
      const int n = f_ehr.rows();
      // Interleave rows into the sample-major 2-token layout.
      Tensor seq = reshape(concat_cols({f_ehr, f_cxr}), {2 * n, dim});
      Tensor enc = encoder.forward(seq, /*tokens=*/2);
      return classifier.forward(mean_pool_groups(enc, 2));
    }
  }
  throw MmfError("fusion: unknown kind");
}

void FusionHead::collect(ParamMap& params) {
  classifier.collect("fusion.classifier", params);
  if (cfg.kind == FusionKind::kEhrOnly) return;
  projection.collect("fusion.projection", params);
  params.emplace("fusion.missing_token", missing_token);
  if (cfg.kind == FusionKind::kAttention) {
    encoder.collect("fusion.encoder", params);
  } else if (cfg.kind == FusionKind::kLstm) {
    rnn.collect("fusion.rnn", params);
  }
}

FusedModel FusedModel::create(const EhrEncoderConfig& ehr_cfg,
                              const ImgEncoderConfig& img_cfg,
                              const FusionConfig& fusion_cfg,
                              const PreprocessConfig& preprocess,
                              int num_labels, std::mt19937_64& rng) {
  FusedModel m;
  m.num_labels = num_labels;
  m.preprocess = preprocess;
  m.ehr = EhrEncoder::create(ehr_cfg, num_labels, rng);
  m.img = ImgEncoder::create(img_cfg, num_labels, rng);
  m.fusion = FusionHead::create(fusion_cfg, ehr_cfg.hidden,
                                m.img.feature_dim(), num_labels, rng);
  m.uncertainty = TaskUncertainty::create(num_labels);
  return m;
}

void FusedModel::collect(ParamMap& params, BufferMap& bufs, LossMode mode) {
  const FusionKind kind = fusion.cfg.kind;
  if (kind != FusionKind::kImgOnly) ehr.lstm.collect("ehr.lstm", params);
  if (kind != FusionKind::kEhrOnly) img.backbone.collect("img.backbone", params, bufs);
  fusion.collect(params);
  if (mode == LossMode::kUncertainty) {
    params.emplace("uncertainty.s", uncertainty.s);
  }
}

Tensor FusedModel::logits(const std::vector<Tensor>& steps,
                          const Tensor& images, int n_total, int n_paired,
                          bool train, std::mt19937_64& rng) {
  const FusionKind kind = fusion.cfg.kind;
  Tensor f_ehr, f_cxr;
  if (kind != FusionKind::kImgOnly) {
    f_ehr = ehr.encode(steps, train, rng);
  }
  if (kind != FusionKind::kEhrOnly) {
    std::vector<Tensor> rows;
    if (n_paired > 0) {
      rows.push_back(fusion.project(img.encode(images, train)));
    }
    if (n_paired < n_total) {
      rows.push_back(repeat_row(fusion.missing_token, n_total - n_paired));
    }
    f_cxr = rows.size() == 1 ? rows[0] : concat_rows(rows);
  }
  return fusion.logits(f_ehr, f_cxr);
}

namespace {

std::vector<double> preprocess_image(const GrayImage& raw,
                                     const PreprocessConfig& pp, bool train,
                                     std::mt19937_64& rng) {
  const GrayImage* src = &raw;
  GrayImage enhanced;
  if (pp.use_clahe) {
    enhanced = clahe(raw, pp.clahe);
    src = &enhanced;
  }
  if (train) return train_transform(*src, pp.augment, rng);
  return eval_transform(*src, pp.eval_resize, pp.eval_crop);
}

}  // namespace

Batch make_batch(const std::vector<MultimodalRecord>& records,
                 const std::vector<int>& indices,
                 const PreprocessConfig& preprocess, bool train,
                 std::mt19937_64& rng) {
  if (indices.empty()) throw MmfError("make_batch: empty index list");
  Batch batch;
  batch.record_idx = indices;
  // Paired-first ordering.
  std::stable_partition(batch.record_idx.begin(), batch.record_idx.end(),
                        [&](int i) { return records[i].image.has_value(); });
  batch.n = static_cast<int>(batch.record_idx.size());
  for (int i : batch.record_idx) batch.n_paired += records[i].image.has_value();

  const int t = records[indices[0]].series.t;
  for (int i : indices) {
    if (records[i].series.t != t) {
      throw MmfError("make_batch: mixed series lengths in one batch");
    }
  }
  batch.steps.reserve(t);
  for (int s = 0; s < t; ++s) {
    ArrayX step(batch.n * ChannelSchema::kTotalChannels);
    for (int r = 0; r < batch.n; ++r) {
      const DiscretizedSeries& series = records[batch.record_idx[r]].series;
      for (int c = 0; c < ChannelSchema::kTotalChannels; ++c) {
        step[r * ChannelSchema::kTotalChannels + c] = series.at(s, c);
      }
    }
    batch.steps.push_back(
        Tensor::from_array({batch.n, ChannelSchema::kTotalChannels}, step));
  }

  const int num_labels = static_cast<int>(records[indices[0]].labels.size());
  ArrayX labels(batch.n * num_labels);
  for (int r = 0; r < batch.n; ++r) {
    for (int l = 0; l < num_labels; ++l) {
      labels[r * num_labels + l] = records[batch.record_idx[r]].labels[l];
    }
  }
  batch.labels = Tensor::from_array({batch.n, num_labels}, labels);

  if (batch.n_paired > 0) {
    const int crop = train ? preprocess.augment.crop : preprocess.eval_crop;
    ArrayX pixels(static_cast<int64_t>(batch.n_paired) * crop * crop);
    for (int r = 0; r < batch.n_paired; ++r) {
      std::vector<double> img = preprocess_image(
          *records[batch.record_idx[r]].image, preprocess, train, rng);
      std::copy(img.begin(), img.end(),
                pixels.data() + static_cast<int64_t>(r) * crop * crop);
    }
    batch.images =
        Tensor::from_array({batch.n_paired, 1, crop, crop}, pixels);
  }
  return batch;
}

namespace {

// Shuffle, then chunk into batches of equal series length.
std::vector<std::vector<int>> plan_batches(
    const std::vector<MultimodalRecord>& records,
    const std::vector<int>& indices, int batch_size, std::mt19937_64& rng) {
  std::vector<int> order = indices;
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return records[a].series.t < records[b].series.t;
  });
  std::vector<std::vector<int>> batches;
  std::vector<int> cur;
  for (int i : order) {
    if (!cur.empty() &&
        (static_cast<int>(cur.size()) == batch_size ||
         records[cur.back()].series.t != records[i].series.t)) {
      batches.push_back(std::move(cur));
      cur.clear();
    }
    cur.push_back(i);
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

std::vector<int> all_indices(size_t n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<int> paired_indices(const std::vector<MultimodalRecord>& records) {
  std::vector<int> idx;
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].image.has_value()) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

// Headline validation metric: mean AUROC over tasks with both classes.
double headline_auroc(const std::vector<std::vector<double>>& scores,
                      const std::vector<std::vector<int>>& labels) {
  if (scores.empty()) return 0.5;
  const size_t n_tasks = scores[0].size();
  double sum = 0;
  int valid = 0;
  for (size_t t = 0; t < n_tasks; ++t) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][t];
      y[i] = labels[i][t];
    }
    try {
      sum += auroc(s, y);
      ++valid;
    } catch (const MmfError&) {
    }
  }
  return valid ? sum / valid : 0.5;
}

std::map<std::string, ArrayX> snapshot_buffers(const BufferMap& bufs) {
  std::map<std::string, ArrayX> snap;
  for (const auto& [name, ptr] : bufs) snap[name] = *ptr;
  return snap;
}

void restore_buffers(BufferMap& bufs, const std::map<std::string, ArrayX>& snap) {
  for (auto& [name, ptr] : bufs) {
    auto it = snap.find(name);
    if (it == snap.end()) throw MmfError("restore_buffers: missing " + name);
    *ptr = it->second;
  }
}

void check_finite(const Tensor& loss, const char* op, int epoch, size_t bi) {
  if (!std::isfinite(loss.item())) {
    throw MmfError(std::string(op) + ": non-finite loss at epoch " +
                   std::to_string(epoch) + ", batch " + std::to_string(bi) +
                   " (value " + std::to_string(loss.item()) + ")");
  }
}

// Shared epoch loop for both pretraining variants and fine-tuning.
struct EpochCallbacks {
  std::function<Tensor(const Batch&, std::mt19937_64&)> batch_loss;
  std::function<std::vector<std::vector<double>>(
      const std::vector<MultimodalRecord>&)>
      predict_probs;
};

TrainResult run_training(const std::vector<MultimodalRecord>& train,
                         const std::vector<int>& train_indices,
                         const std::vector<MultimodalRecord>& val,
                         const PreprocessConfig& preprocess,
                         const TrainHyper& hyper, uint64_t seed,
                         ParamMap& params, BufferMap& bufs,
                         const EpochCallbacks& cb, const char* op) {
  if (train_indices.empty()) {
    throw MmfError(std::string(op) + ": empty training subset");
  }
  Adam opt(hyper.lr);
  TrainResult result;
  std::mt19937_64 rng(fnv1a(op, fnv1a(hex64(seed))));
  auto best_params = snapshot_params(params);
  auto best_bufs = snapshot_buffers(bufs);
  int stale = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    double loss_sum = 0;
    size_t n_batches = 0;
    for (const auto& batch_idx :
         plan_batches(train, train_indices, hyper.batch_size, rng)) {
      Batch batch = make_batch(train, batch_idx, preprocess, /*train=*/true, rng);
      Tensor loss = cb.batch_loss(batch, rng);
      check_finite(loss, op, epoch, n_batches);
      backward(loss);
      opt.step(params);
      loss_sum += loss.item();
      ++n_batches;
    }
    result.train_loss_per_epoch.push_back(loss_sum / std::max<size_t>(1, n_batches));

    std::vector<std::vector<double>> val_scores = cb.predict_probs(val);
    std::vector<std::vector<int>> val_labels;
    for (const auto& r : val) val_labels.push_back(r.labels);
    const double val_auroc = headline_auroc(val_scores, val_labels);
    result.val_auroc_per_epoch.push_back(val_auroc);
    if (result.best_epoch < 0 || val_auroc > result.best_val_auroc) {
      result.best_val_auroc = val_auroc;
      result.best_epoch = epoch;
      best_params = snapshot_params(params);
      best_bufs = snapshot_buffers(bufs);
      stale = 0;
    } else if (++stale >= hyper.patience) {
      break;
    }
  }
  restore_params(params, best_params);
  restore_buffers(bufs, best_bufs);
  return result;
}

std::vector<std::vector<double>> sigmoid_rows(const Tensor& logits) {
  std::vector<std::vector<double>> out(logits.rows());
  for (int r = 0; r < logits.rows(); ++r) {
    out[r].resize(logits.cols());
    for (int c = 0; c < logits.cols(); ++c) {
      out[r][c] = 1.0 / (1.0 + std::exp(-logits.at(r, c)));
    }
  }
  return out;
}

// Eval-mode scoring in fixed-size chunks, preserving record order.
template <typename Forward>
std::vector<std::vector<double>> score_records(
    const std::vector<MultimodalRecord>& records,
    const std::vector<int>& indices, const PreprocessConfig& preprocess,
    int batch_size, Forward&& forward) {
  std::vector<std::vector<double>> out(records.size());
  std::mt19937_64 rng(0);  // eval path never consumes randomness
  std::vector<int> order = indices;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return records[a].series.t < records[b].series.t;
  });
  size_t pos = 0;
  while (pos < order.size()) {
    size_t end = pos + 1;
    while (end < order.size() &&
           end - pos < static_cast<size_t>(batch_size) &&
           records[order[end]].series.t == records[order[pos]].series.t) {
      ++end;
    }
    std::vector<int> chunk(order.begin() + pos, order.begin() + end);
    Batch batch = make_batch(records, chunk, preprocess, /*train=*/false, rng);
    Tensor logits = forward(batch, rng);
    auto probs = sigmoid_rows(logits);
    for (size_t r = 0; r < batch.record_idx.size(); ++r) {
      out[batch.record_idx[r]] = std::move(probs[r]);
    }
    pos = end;
  }
  return out;
}

}  // namespace

TrainResult pretrain_ehr(EhrEncoder& encoder,
                         const std::vector<MultimodalRecord>& train,
                         const std::vector<MultimodalRecord>& val,
                         const PreprocessConfig& preprocess,
                         const TrainHyper& hyper, uint64_t seed) {
  ParamMap params;
  BufferMap bufs;
  encoder.collect(params);
  EpochCallbacks cb;
  cb.batch_loss = [&](const Batch& batch, std::mt19937_64& rng) {
    Tensor f = encoder.encode(batch.steps, /*train=*/true, rng);
    Tensor logits = encoder.classifier.forward(f);
    return sum_all(bce_with_logits_per_task(logits, batch.labels));
  };
  cb.predict_probs = [&](const std::vector<MultimodalRecord>& records) {
    return score_records(records, all_indices(records.size()), preprocess,
                         hyper.batch_size, [&](const Batch& b, std::mt19937_64& rng) {
                           return encoder.classifier.forward(
                               encoder.encode(b.steps, false, rng));
                         });
  };
  return run_training(train, all_indices(train.size()), val, preprocess, hyper,
                      seed, params, bufs, cb, "pretrain_ehr");
}

TrainResult pretrain_img(ImgEncoder& encoder,
                         const std::vector<MultimodalRecord>& train,
                         const std::vector<MultimodalRecord>& val,
                         const PreprocessConfig& preprocess,
                         const TrainHyper& hyper, uint64_t seed) {
  ParamMap params;
  BufferMap bufs;
  encoder.collect(params, bufs);
  std::vector<int> train_idx = paired_indices(train);
  std::vector<int> val_idx = paired_indices(val);
  if (val_idx.empty()) {
    throw MmfError("pretrain_img: validation split has no paired records");
  }
  EpochCallbacks cb;
  cb.batch_loss = [&](const Batch& batch, std::mt19937_64&) {
    Tensor f = encoder.encode(batch.images, /*train=*/true);
    Tensor logits = encoder.classifier.forward(f);
    // All records in these batches are paired, so rows align with labels.
    return sum_all(bce_with_logits_per_task(logits, batch.labels));
  };
  cb.predict_probs = [&](const std::vector<MultimodalRecord>& records) {
    return score_records(records, paired_indices(records), preprocess,
                         hyper.batch_size, [&](const Batch& b, std::mt19937_64&) {
                           return encoder.classifier.forward(
                               encoder.encode(b.images, false));
                         });
  };
  // Unpaired validation records keep empty score rows; drop them for AUROC by
  // scoring only the paired subset.
  std::vector<MultimodalRecord> val_paired;
  for (int i : val_idx) val_paired.push_back(val[i]);
  return run_training(train, train_idx, val_paired, preprocess, hyper, seed,
                      params, bufs, cb, "pretrain_img");
}

TrainResult finetune(FusedModel& model,
                     const std::vector<MultimodalRecord>& train,
                     const std::vector<MultimodalRecord>& val, LossMode mode,
                     const TrainHyper& hyper, uint64_t seed) {
  ParamMap params;
  BufferMap bufs;
  model.collect(params, bufs, mode);
  std::vector<int> train_idx = model.fusion.cfg.kind == FusionKind::kImgOnly
                                   ? paired_indices(train)
                                   : all_indices(train.size());
  EpochCallbacks cb;
  cb.batch_loss = [&](const Batch& batch, std::mt19937_64& rng) {
    Tensor logits = model.logits(batch.steps, batch.images, batch.n,
                                 batch.n_paired, /*train=*/true, rng);
    Tensor task_losses = bce_with_logits_per_task(logits, batch.labels);
    if (mode == LossMode::kUncertainty) {
      return uncertainty_loss(task_losses, model.uncertainty);
    }
    return sum_all(task_losses);
  };
  cb.predict_probs = [&](const std::vector<MultimodalRecord>& records) {
    return predict_all(model, records);
  };
  std::vector<MultimodalRecord> val_used = val;
  if (model.fusion.cfg.kind == FusionKind::kImgOnly) {
    val_used.clear();
    for (const auto& r : val) {
      if (r.image.has_value()) val_used.push_back(r);
    }
    if (val_used.empty()) {
      throw MmfError("finetune: image-only model but no paired validation records");
    }
  }
  return run_training(train, train_idx, val_used, model.preprocess, hyper,
                      seed, params, bufs, cb, "finetune");
}

std::vector<std::vector<double>> predict_all(
    FusedModel& model, const std::vector<MultimodalRecord>& records) {
  std::vector<int> idx = model.fusion.cfg.kind == FusionKind::kImgOnly
                             ? paired_indices(records)
                             : all_indices(records.size());
  return score_records(records, idx, model.preprocess, 16,
                       [&](const Batch& b, std::mt19937_64& rng) {
                         return model.logits(b.steps, b.images, b.n,
                                             b.n_paired, false, rng);
                       });
}

std::vector<double> predict(FusedModel& model, const MultimodalRecord& record) {
  std::vector<MultimodalRecord> one = {record};
  auto all = predict_all(model, one);
  if (all.empty() || all[0].empty()) {
    throw MmfError("predict: image-only model cannot score an unpaired record");
  }
  return all[0];
}

MetricsReport evaluate(FusedModel& model,
                       const std::vector<MultimodalRecord>& records,
                       const std::vector<std::string>& label_names,
                       const std::string& config_hash) {
  auto scores = predict_all(model, records);
  std::vector<std::vector<double>> kept_scores;
  std::vector<std::vector<int>> kept_labels;
  for (size_t i = 0; i < records.size(); ++i) {
    if (scores[i].empty()) continue;  // unpaired, image-only model
    kept_scores.push_back(scores[i]);
    kept_labels.push_back(records[i].labels);
  }
  return compute_report(kept_scores, kept_labels, label_names, config_hash);
}

}  // namespace mmfuse
