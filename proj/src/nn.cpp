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

#include "mmfuse/nn.hpp"

#include <cmath>

namespace mmfuse {

namespace {

Tensor uniform_init(Shape s, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  ArrayX v(numel(s));
  for (int64_t i = 0; i < v.size(); ++i) v[i] = u(rng);
  auto t = Tensor::from_array(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

LinearLayer LinearLayer::create(int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearLayer l;
  l.w = uniform_init({out, in}, rng, bound);
  l.b = uniform_init({1, out}, rng, bound);
  return l;
}

void LinearLayer::collect(const std::string& prefix, ParamMap& params) {
  params[prefix + ".w"] = w;
  params[prefix + ".b"] = b;
}

LSTMLayer LSTMLayer::create(int in, int hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LSTMLayer l;
  l.hidden = hidden;
  l.w_ih = uniform_init({4 * hidden, in}, rng, bound);
  l.w_hh = uniform_init({4 * hidden, hidden}, rng, bound);
  l.bias = uniform_init({1, 4 * hidden}, rng, bound);
  // Forget-gate bias starts at 1 so long-range memory survives early training.
  for (int i = hidden; i < 2 * hidden; ++i) l.bias.value()[i] = 1.0;
  return l;
}

void LSTMLayer::step(const Tensor& x, Tensor& h, Tensor& c) const {
  Tensor gates = add(linear(x, w_ih, bias), matmul_nt(h, w_hh));
  Tensor ig = sigmoid(slice_cols(gates, 0, hidden));
  Tensor fg = sigmoid(slice_cols(gates, hidden, 2 * hidden));
  Tensor gg = tanh_(slice_cols(gates, 2 * hidden, 3 * hidden));
  Tensor og = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
  c = add(mul(fg, c), mul(ig, gg));
  h = mul(og, tanh_(c));
}

LSTMStack LSTMStack::create(int in, int hidden, int n_layers, double dropout,
                            std::mt19937_64& rng) {
  LSTMStack s;
  s.dropout_p = dropout;
  for (int i = 0; i < n_layers; ++i) {
    s.layers.push_back(LSTMLayer::create(i == 0 ? in : hidden, hidden, rng));
  }
  return s;
}

Tensor LSTMStack::forward(const std::vector<Tensor>& steps, bool train,
                          std::mt19937_64& rng) const {
  if (steps.empty()) throw MmfError("LSTMStack: empty sequence");
  const int n = steps[0].rows();
  std::vector<Tensor> seq = steps;
  Tensor top_h;
  for (size_t li = 0; li < layers.size(); ++li) {
    const LSTMLayer& l = layers[li];
    Tensor h = Tensor::zeros({n, l.hidden});
    Tensor c = Tensor::zeros({n, l.hidden});
    std::vector<Tensor> out;
    out.reserve(seq.size());
    for (const Tensor& x : seq) {
      l.step(x, h, c);
      out.push_back(h);
    }
    if (li + 1 < layers.size() && dropout_p > 0.0) {
      for (auto& t : out) t = dropout(t, dropout_p, train, rng);
    }
    seq = std::move(out);
    top_h = h;
  }
  return top_h;
}

void LSTMLayer::collect(const std::string& prefix, ParamMap& params) {
  params[prefix + ".w_ih"] = w_ih;
  params[prefix + ".w_hh"] = w_hh;
  params[prefix + ".bias"] = bias;
}

void LSTMStack::collect(const std::string& prefix, ParamMap& params) {
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".l" + std::to_string(i), params);
  }
}

TransformerLayer TransformerLayer::create(int dim, int heads, int ff_dim,
                                          std::mt19937_64& rng) {
  if (dim % heads != 0) throw MmfError("TransformerLayer: dim % heads != 0");
  TransformerLayer l;
  l.heads = heads;
  l.q = LinearLayer::create(dim, dim, rng);
  l.k = LinearLayer::create(dim, dim, rng);
  l.v = LinearLayer::create(dim, dim, rng);
  l.o = LinearLayer::create(dim, dim, rng);
  l.ff1 = LinearLayer::create(dim, ff_dim, rng);
  l.ff2 = LinearLayer::create(ff_dim, dim, rng);
  l.ln1_g = Tensor::constant({1, dim}, 1.0);
  l.ln1_g.set_requires_grad(true);
  l.ln1_b = Tensor::zeros({1, dim}, true);
  l.ln2_g = Tensor::constant({1, dim}, 1.0);
  l.ln2_g.set_requires_grad(true);
  l.ln2_b = Tensor::zeros({1, dim}, true);
  return l;
}

Tensor TransformerLayer::forward(const Tensor& x, int tokens) const {
  Tensor h = layer_norm_rows(x, ln1_g, ln1_b);
  Tensor att = multihead_attention(q.forward(h), k.forward(h), v.forward(h),
                                   tokens, heads);
  Tensor x1 = add(x, o.forward(att));
  Tensor h2 = layer_norm_rows(x1, ln2_g, ln2_b);
  Tensor ff = ff2.forward(gelu(ff1.forward(h2)));
  return add(x1, ff);
}

void TransformerLayer::collect(const std::string& prefix, ParamMap& params) {
  q.collect(prefix + ".q", params);
  k.collect(prefix + ".k", params);
  v.collect(prefix + ".v", params);
  o.collect(prefix + ".o", params);
  ff1.collect(prefix + ".ff1", params);
  ff2.collect(prefix + ".ff2", params);
  params[prefix + ".ln1_g"] = ln1_g;
  params[prefix + ".ln1_b"] = ln1_b;
  params[prefix + ".ln2_g"] = ln2_g;
  params[prefix + ".ln2_b"] = ln2_b;
}

TransformerEncoder TransformerEncoder::create(int dim, int heads, int ff_dim,
                                              int n_layers,
                                              std::mt19937_64& rng) {
  TransformerEncoder e;
  for (int i = 0; i < n_layers; ++i) {
    e.layers.push_back(TransformerLayer::create(dim, heads, ff_dim, rng));
  }
  e.final_ln_g = Tensor::constant({1, dim}, 1.0);
  e.final_ln_g.set_requires_grad(true);
  e.final_ln_b = Tensor::zeros({1, dim}, true);
  return e;
}

Tensor TransformerEncoder::forward(const Tensor& x, int tokens) const {
  Tensor h = x;
  for (const auto& l : layers) h = l.forward(h, tokens);
  return layer_norm_rows(h, final_ln_g, final_ln_b);
}

void TransformerEncoder::collect(const std::string& prefix, ParamMap& params) {
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".layer" + std::to_string(i), params);
  }
  params[prefix + ".final_ln_g"] = final_ln_g;
  params[prefix + ".final_ln_b"] = final_ln_b;
}

BatchNorm2dLayer BatchNorm2dLayer::create(int channels) {
  BatchNorm2dLayer l;
  l.gamma = Tensor::constant({1, channels}, 1.0);
  l.gamma.set_requires_grad(true);
  l.beta = Tensor::zeros({1, channels}, true);
  l.running_mean = ArrayX::Zero(channels);
  l.running_var = ArrayX::Ones(channels);
  return l;
}

Tensor BatchNorm2dLayer::forward(const Tensor& x, bool train) {
  return batch_norm2d(x, gamma, beta, running_mean, running_var, train);
}

void BatchNorm2dLayer::collect(const std::string& prefix, ParamMap& params,
                               BufferMap& bufs) {
  params[prefix + ".gamma"] = gamma;
  params[prefix + ".beta"] = beta;
  bufs[prefix + ".running_mean"] = &running_mean;
  bufs[prefix + ".running_var"] = &running_var;
}

ConvLayer ConvLayer::create(int in_ch, int out_ch, int k, int stride, int pad,
                            std::mt19937_64& rng) {
  ConvLayer l;
  l.stride = stride;
  l.pad = pad;
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double std = std::sqrt(2.0 / fan_in);
  std::normal_distribution<double> dist(0.0, std);
  ArrayX w(static_cast<int64_t>(out_ch) * in_ch * k * k);
  for (int64_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
  l.w = Tensor::from_array({out_ch, in_ch, k, k}, std::move(w));
  l.w.set_requires_grad(true);
  l.b = Tensor::zeros({1, out_ch}, true);
  return l;
}

void ConvLayer::collect(const std::string& prefix, ParamMap& params) {
  params[prefix + ".w"] = w;
  params[prefix + ".b"] = b;
}

BasicBlock BasicBlock::create(int in_ch, int out_ch, int stride,
                              std::mt19937_64& rng) {
  BasicBlock b;
  b.conv1 = ConvLayer::create(in_ch, out_ch, 3, stride, 1, rng);
  b.bn1 = BatchNorm2dLayer::create(out_ch);
  b.conv2 = ConvLayer::create(out_ch, out_ch, 3, 1, 1, rng);
  b.bn2 = BatchNorm2dLayer::create(out_ch);
  if (stride != 1 || in_ch != out_ch) {
    b.has_down = true;
    b.down_conv = ConvLayer::create(in_ch, out_ch, 1, stride, 0, rng);
    b.down_bn = BatchNorm2dLayer::create(out_ch);
  }
  return b;
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor h = relu(bn1.forward(conv1.forward(x), train));
  h = bn2.forward(conv2.forward(h), train);
  Tensor skip = has_down ? down_bn.forward(down_conv.forward(x), train) : x;
  return relu(add(h, skip));
}

void BasicBlock::collect(const std::string& prefix, ParamMap& params,
                         BufferMap& bufs) {
  conv1.collect(prefix + ".conv1", params);
  bn1.collect(prefix + ".bn1", params, bufs);
  conv2.collect(prefix + ".conv2", params);
  bn2.collect(prefix + ".bn2", params, bufs);
  if (has_down) {
    down_conv.collect(prefix + ".down_conv", params);
    down_bn.collect(prefix + ".down_bn", params, bufs);
  }
}

ResNet34 ResNet34::create(int base_channels, std::mt19937_64& rng) {
  ResNet34 r;
  const int c = base_channels;
  r.stem = ConvLayer::create(1, c, 7, 2, 3, rng);
  r.stem_bn = BatchNorm2dLayer::create(c);
  const int stage_blocks[4] = {3, 4, 6, 3};
  int in_ch = c;
  for (int stage = 0; stage < 4; ++stage) {
    const int out_ch = c << stage;
    for (int i = 0; i < stage_blocks[stage]; ++i) {
      const int stride = (stage > 0 && i == 0) ? 2 : 1;
      r.blocks.push_back(BasicBlock::create(in_ch, out_ch, stride, rng));
      in_ch = out_ch;
    }
  }
  r.feature_dim = in_ch;
  return r;
}

Tensor ResNet34::features(const Tensor& x, bool train) {
  Tensor h = relu(stem_bn.forward(stem.forward(x), train));
  h = max_pool2d(h, 3, 2, 1);
  for (auto& b : blocks) h = b.forward(h, train);
  return global_avg_pool(h);
}

void ResNet34::collect(const std::string& prefix, ParamMap& params,
                       BufferMap& bufs) {
  stem.collect(prefix + ".stem", params);
  stem_bn.collect(prefix + ".stem_bn", params, bufs);
  for (size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".block" + std::to_string(i), params, bufs);
  }
}

void Adam::step(ParamMap& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto node = p.node();
    if (!node->requires_grad) continue;
    if (node->grad.size() == 0) continue;
    Slot& s = slots_[name];
    if (s.m.size() == 0) {
      s.m = ArrayX::Zero(node->value.size());
      s.v = ArrayX::Zero(node->value.size());
    }
    s.m = b1_ * s.m + (1.0 - b1_) * node->grad;
    s.v = b2_ * s.v + (1.0 - b2_) * node->grad.square();
    node->value -= lr_ * (s.m / bc1) / ((s.v / bc2).sqrt() + eps_);
    node->grad.setZero();
  }
}

std::map<std::string, ArrayX> snapshot_params(const ParamMap& params) {
  std::map<std::string, ArrayX> snap;
  for (const auto& [name, p] : params) snap[name] = p.value();
  return snap;
}

void restore_params(ParamMap& params,
                    const std::map<std::string, ArrayX>& snap) {
  for (auto& [name, p] : params) {
    auto it = snap.find(name);
    if (it == snap.end()) throw MmfError("restore_params: missing " + name);
    p.value() = it->second;
  }
}

}  // namespace mmfuse
