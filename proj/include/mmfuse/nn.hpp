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

#ifndef MMFUSE_NN_HPP_
#define MMFUSE_NN_HPP_

#include <map>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Trainable parameters by name. Non-trainable buffers (batch-norm running
// stats) are exposed separately so checkpoints can carry both.
using ParamMap = std::map<std::string, Tensor>;
using BufferMap = std::map<std::string, ArrayX*>;

struct LinearLayer {
  Tensor w;  // {out, in}
  Tensor b;  // {1, out}

  static LinearLayer create(int in, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, ParamMap& params);
};

struct LSTMLayer {
  // Gate order i, f, g, o in the 4h-wide blocks.
  Tensor w_ih;  // {4h, in}
  Tensor w_hh;  // {4h, h}
  Tensor bias;  // {1, 4h}
  int hidden = 0;

  static LSTMLayer create(int in, int hidden, std::mt19937_64& rng);
  // One step; h and c are {N, hidden}.
  void step(const Tensor& x, Tensor& h, Tensor& c) const;
  void collect(const std::string& prefix, ParamMap& params);
};

struct LSTMStack {
  std::vector<LSTMLayer> layers;
  double dropout_p = 0.0;  // between layers, train-time only

  static LSTMStack create(int in, int hidden, int n_layers, double dropout,
                          std::mt19937_64& rng);
  // steps: sequence of {N, in} tensors; returns final hidden of top layer.
  Tensor forward(const std::vector<Tensor>& steps, bool train,
                 std::mt19937_64& rng) const;
  void collect(const std::string& prefix, ParamMap& params);
};

// Pre-norm transformer encoder layer with GELU feedforward and no positional
// embeddings.
struct TransformerLayer {
  LinearLayer q, k, v, o, ff1, ff2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  int heads = 0;

  static TransformerLayer create(int dim, int heads, int ff_dim,
                                 std::mt19937_64& rng);
  Tensor forward(const Tensor& x, int tokens) const;
  void collect(const std::string& prefix, ParamMap& params);
};

struct TransformerEncoder {
  std::vector<TransformerLayer> layers;
  Tensor final_ln_g, final_ln_b;

  static TransformerEncoder create(int dim, int heads, int ff_dim,
                                   int n_layers, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, int tokens) const;
  void collect(const std::string& prefix, ParamMap& params);
};

struct BatchNorm2dLayer {
  Tensor gamma, beta;
  ArrayX running_mean, running_var;

  static BatchNorm2dLayer create(int channels);
  Tensor forward(const Tensor& x, bool train);
  void collect(const std::string& prefix, ParamMap& params, BufferMap& bufs);
};

struct ConvLayer {
  Tensor w;  // {F, C, k, k}
  Tensor b;  // {1, F}
  int stride = 1;
  int pad = 0;

  static ConvLayer create(int in_ch, int out_ch, int k, int stride, int pad,
                          std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, ParamMap& params);
};

struct BasicBlock {
  ConvLayer conv1, conv2;
  BatchNorm2dLayer bn1, bn2;
  bool has_down = false;
  ConvLayer down_conv;
  BatchNorm2dLayer down_bn;

  static BasicBlock create(int in_ch, int out_ch, int stride,
                           std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool train);
  void collect(const std::string& prefix, ParamMap& params, BufferMap& bufs);
};

// Residual CNN in the ResNet-34 topology: 7x7 stem, 3x3 max pool, stages of
// {3,4,6,3} basic blocks, global average pooling. base_channels 64 gives the
// full-width network with a 512-dim feature vector.
struct ResNet34 {
  ConvLayer stem;
  BatchNorm2dLayer stem_bn;
  std::vector<BasicBlock> blocks;
  int feature_dim = 0;

  static ResNet34 create(int base_channels, std::mt19937_64& rng);
  Tensor features(const Tensor& x, bool train);  // {N,1,H,W} -> {N, dim}
  void collect(const std::string& prefix, ParamMap& params, BufferMap& bufs);
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // Applies one update from accumulated gradients, then zeroes them.
  void step(ParamMap& params);

 private:
  struct Slot {
    ArrayX m, v;
  };
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

// Deep copies of parameter values (for best-checkpoint bookkeeping).
std::map<std::string, ArrayX> snapshot_params(const ParamMap& params);
void restore_params(ParamMap& params, const std::map<std::string, ArrayX>& snap);

}  // namespace mmfuse

#endif  // MMFUSE_NN_HPP_
