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
//
// Modality encoders, the two-token fusion heads, and the pretrain /
// fine-tune / predict training loops.

#ifndef MMFUSE_MODEL_HPP_
#define MMFUSE_MODEL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/image_ops.hpp"
#include "mmfuse/loss.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/nn.hpp"

namespace mmfuse {

// Image pipeline applied before encoding; CLAHE first, then the geometric
// transform (random for training, resize + center crop for evaluation).
struct PreprocessConfig {
  bool use_clahe = true;
  ClaheParams clahe;
  AugmentParams augment;       // train-time; carries resize/crop
  int eval_resize = 256;
  int eval_crop = 224;
};

struct EhrEncoderConfig {
  int layers = 2;
  int hidden = 256;
  double dropout = 0.3;
};

struct ImgEncoderConfig {
  // base 64 = full-width backbone (512-dim features); smaller values scale
  // every stage down for desk-scale runs.
  int base_channels = 16;
};

enum class FusionKind { kAttention, kLstm, kEhrOnly, kImgOnly };
enum class LossMode { kBce, kUncertainty };

struct FusionConfig {
  FusionKind kind = FusionKind::kAttention;
  int layers = 2;
  int heads = 8;
  int ff_dim = 1024;
};

struct EhrEncoder {
  EhrEncoderConfig cfg;
  LSTMStack lstm;
  LinearLayer classifier;  // pretraining head only

  static EhrEncoder create(const EhrEncoderConfig& cfg, int num_labels,
                           std::mt19937_64& rng);
  // steps: t tensors of {N,76}; returns {N, hidden}.
  Tensor encode(const std::vector<Tensor>& steps, bool train,
                std::mt19937_64& rng) const;
  void collect(ParamMap& params);
};

struct ImgEncoder {
  ImgEncoderConfig cfg;
  ResNet34 backbone;
  LinearLayer classifier;  // pretraining head only

  static ImgEncoder create(const ImgEncoderConfig& cfg, int num_labels,
                           std::mt19937_64& rng);
  int feature_dim() const { return backbone.feature_dim; }
  Tensor encode(const Tensor& images, bool train);  // {N,1,H,W} -> {N,dim}
  void collect(ParamMap& params, BufferMap& bufs);
};

// Projection (Eq. 1), the learnable missing-image token, and one of the two
// fusion heads over the fixed 2-token sequence [f_ehr, f_cxr].
struct FusionHead {
  FusionConfig cfg;
  int dim = 0;
  LinearLayer projection;       // d_img -> dim
  TransformerEncoder encoder;   // kind == kAttention
  LSTMStack rnn;                // kind == kLstm
  LinearLayer classifier;       // dim -> num_labels
  Tensor missing_token;         // {1, dim}

  static FusionHead create(const FusionConfig& cfg, int dim, int d_img,
                           int num_labels, std::mt19937_64& rng);
  Tensor project(const Tensor& f_cxr_raw) const;
  // Both inputs {N, dim} (image rows already projected or replaced by the
  // missing token); returns {N, num_labels}.
  Tensor logits(const Tensor& f_ehr, const Tensor& f_cxr) const;
  void collect(ParamMap& params);
};

// The full fused model plus everything fine-tuning updates.
struct FusedModel {
  int num_labels = 0;
  PreprocessConfig preprocess;
  EhrEncoder ehr;
  ImgEncoder img;
  FusionHead fusion;
  TaskUncertainty uncertainty;  // trained only under LossMode::kUncertainty

  static FusedModel create(const EhrEncoderConfig& ehr_cfg,
                           const ImgEncoderConfig& img_cfg,
                           const FusionConfig& fusion_cfg,
                           const PreprocessConfig& preprocess, int num_labels,
                           std::mt19937_64& rng);
  // Unimodal configurations exclude the unused encoder's parameters.
  void collect(ParamMap& params, BufferMap& bufs, LossMode mode);
  // Batch logits; paired records first in the row order (see Batch).
  Tensor logits(const std::vector<Tensor>& steps, const Tensor& images,
                int n_total, int n_paired, bool train, std::mt19937_64& rng);
};

// Assembled mini-batch: paired records occupy the first n_paired rows so the
// image tensor stays dense and unpaired rows take the missing token.
struct Batch {
  std::vector<Tensor> steps;  // t tensors {N,76}
  Tensor images;              // {n_paired,1,S,S}; undefined when n_paired=0
  Tensor labels;              // {N, num_labels}
  int n = 0;
  int n_paired = 0;
  std::vector<int> record_idx;  // source positions, paired-first order
};

// Requires equal series length across the chosen records.
Batch make_batch(const std::vector<MultimodalRecord>& records,
                 const std::vector<int>& indices,
                 const PreprocessConfig& preprocess, bool train,
                 std::mt19937_64& rng);

struct TrainHyper {
  double lr = 1e-4;
  int epochs = 10;
  int batch_size = 16;
  int patience = 5;  // early stop after this many non-improving epochs
};

struct TrainResult {
  double best_val_auroc = 0.0;
  int best_epoch = -1;
  std::vector<double> train_loss_per_epoch;
  std::vector<double> val_auroc_per_epoch;
};

// Encoder pretraining on its own classifier head; restores the
// best-validation-AUROC weights before returning. The image variant uses only
// records that carry an image and errors if none do.
TrainResult pretrain_ehr(EhrEncoder& encoder,
                         const std::vector<MultimodalRecord>& train,
                         const std::vector<MultimodalRecord>& val,
                         const PreprocessConfig& preprocess,
                         const TrainHyper& hyper, uint64_t seed);
TrainResult pretrain_img(ImgEncoder& encoder,
                         const std::vector<MultimodalRecord>& train,
                         const std::vector<MultimodalRecord>& val,
                         const PreprocessConfig& preprocess,
                         const TrainHyper& hyper, uint64_t seed);

// Joint fine-tuning of encoders + fusion head (+ s under uncertainty mode).
TrainResult finetune(FusedModel& model,
                     const std::vector<MultimodalRecord>& train,
                     const std::vector<MultimodalRecord>& val, LossMode mode,
                     const TrainHyper& hyper, uint64_t seed);

// Eval-mode probabilities for one record / a record list; deterministic.
std::vector<double> predict(FusedModel& model, const MultimodalRecord& record);
std::vector<std::vector<double>> predict_all(
    FusedModel& model, const std::vector<MultimodalRecord>& records);

MetricsReport evaluate(FusedModel& model,
                       const std::vector<MultimodalRecord>& records,
                       const std::vector<std::string>& label_names,
                       const std::string& config_hash);

}  // namespace mmfuse

#endif  // MMFUSE_MODEL_HPP_
