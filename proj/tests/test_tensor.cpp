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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "grad_check.hpp"
#include "mmfuse/nn.hpp"
#include "mmfuse/tensor.hpp"

using namespace mmfuse;
using mmfuse::testutil::max_grad_rel_err;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("matmul forward matches hand computation") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(19));
  CHECK(c.at(0, 1) == doctest::Approx(22));
  CHECK(c.at(1, 0) == doctest::Approx(43));
  CHECK(c.at(1, 1) == doctest::Approx(50));
}

TEST_CASE("elementwise and linear gradients") {
  std::mt19937_64 rng(7);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({5, 4}, rng, 0.5, true);
  Tensor b = Tensor::randn({1, 5}, rng, 0.5, true);
  auto f = [&] { return mean_all(gelu(linear(tanh_(x), w, b))); };
  CHECK(max_grad_rel_err(f, {x, w, b}) < kTol);
}

TEST_CASE("matmul / matmul_nt / softmax / sigmoid gradients") {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor c = Tensor::randn({3, 4}, rng, 1.0, true);
  auto f = [&] {
    Tensor m = matmul(a, b);
    Tensor n = matmul_nt(m, softmax_rows(sigmoid(matmul_nt(a, c))));
    return mean_all(mul(n, n));
  };
  CHECK(max_grad_rel_err(f, {a, b, c}) < kTol);
}

TEST_CASE("layer norm gradients") {
  std::mt19937_64 rng(13);
  Tensor x = Tensor::randn({4, 6}, rng, 2.0, true);
  Tensor g = Tensor::randn({1, 6}, rng, 1.0, true);
  Tensor b = Tensor::randn({1, 6}, rng, 1.0, true);
  auto f = [&] { return mean_all(relu(layer_norm_rows(x, g, b))); };
  CHECK(max_grad_rel_err(f, {x, g, b}) < kTol);
}

TEST_CASE("slice / concat / repeat gradients") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::randn({4, 6}, rng, 1.0, true);
  Tensor v = Tensor::randn({1, 3}, rng, 1.0, true);
  auto f = [&] {
    Tensor top = slice_rows(x, 0, 2);
    Tensor left = slice_cols(x, 0, 3);
    Tensor cat = concat_rows({left, repeat_row(v, 2)});
    Tensor wide = concat_cols({cat, slice_rows(concat_rows({top, x}), 0, 6)});
    return mean_all(mul(wide, wide));
  };
  CHECK(max_grad_rel_err(f, {x, v}) < kTol);
}

TEST_CASE("multihead attention gradients") {
  std::mt19937_64 rng(19);
  const int tokens = 2, heads = 2, d = 8, n = 3;
  Tensor q = Tensor::randn({n * tokens, d}, rng, 1.0, true);
  Tensor k = Tensor::randn({n * tokens, d}, rng, 1.0, true);
  Tensor v = Tensor::randn({n * tokens, d}, rng, 1.0, true);
  auto f = [&] {
    return mean_all(mul(multihead_attention(q, k, v, tokens, heads),
                        multihead_attention(q, k, v, tokens, heads)));
  };
  CHECK(max_grad_rel_err(f, {q, k, v}) < kTol);
}

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(23);
  Tensor x = Tensor::randn({2, 2, 6, 6}, rng, 1.0, true);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, true);
  Tensor b = Tensor::randn({1, 3}, rng, 0.5, true);
  auto f = [&] {
    Tensor y = conv2d(x, w, b, 2, 1);
    return mean_all(mul(y, y));
  };
  CHECK(max_grad_rel_err(f, {x, w, b}) < kTol);
}

TEST_CASE("batch norm (train) gradients") {
  std::mt19937_64 rng(29);
  Tensor x = Tensor::randn({3, 2, 4, 4}, rng, 1.0, true);
  Tensor g = Tensor::randn({1, 2}, rng, 0.5, true);
  Tensor b = Tensor::randn({1, 2}, rng, 0.5, true);
  auto f = [&] {
    ArrayX rm = ArrayX::Zero(2), rv = ArrayX::Ones(2);
    Tensor y = batch_norm2d(x, g, b, rm, rv, /*train=*/true);
    return mean_all(mul(y, y));
  };
  CHECK(max_grad_rel_err(f, {x, g, b}) < kTol);
}

TEST_CASE("pooling gradients") {
  std::mt19937_64 rng(31);
  Tensor x = Tensor::randn({2, 3, 6, 6}, rng, 1.0, true);
  auto f = [&] {
    Tensor y = max_pool2d(x, 3, 2, 1);
    Tensor z = global_avg_pool(mul(y, y));
    return mean_all(mul(z, z));
  };
  CHECK(max_grad_rel_err(f, {x}) < kTol);
}

TEST_CASE("bce with logits: stable values and gradients") {
  Tensor logits = Tensor::from({2, 2}, {0.0, 1e4, 1e4, 0.0});
  Tensor labels = Tensor::from({2, 2}, {1, 0, 1, 0});
  Tensor loss = bce_with_logits_per_task(logits, labels);
  // Column 0: mean(ln2, ~0); column 1: mean(1e4, ln2).
  CHECK(loss.at(0, 0) == doctest::Approx(std::log(2.0) / 2).epsilon(1e-9));
  CHECK(loss.at(0, 1) == doctest::Approx((1e4 + std::log(2.0)) / 2));

  std::mt19937_64 rng(37);
  Tensor lg = Tensor::randn({4, 3}, rng, 2.0, true);
  Tensor lb = Tensor::from({4, 3}, {1, 0, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0});
  auto f = [&] { return mean_all(bce_with_logits_per_task(lg, lb)); };
  CHECK(max_grad_rel_err(f, {lg}) < kTol);
  CHECK_THROWS_AS(
      bce_with_logits_per_task(lg, Tensor::constant({4, 3}, 0.5)), MmfError);
}

TEST_CASE("lstm stack gradients and shape") {
  std::mt19937_64 rng(41);
  LSTMStack lstm = LSTMStack::create(5, 4, 2, 0.0, rng);
  std::vector<Tensor> steps;
  for (int t = 0; t < 3; ++t) steps.push_back(Tensor::randn({2, 5}, rng, 1.0));
  ParamMap params;
  lstm.collect("lstm", params);
  std::vector<Tensor> plist;
  for (auto& [k, p] : params) plist.push_back(p);
  std::mt19937_64 drng(1);
  auto f = [&] {
    Tensor h = lstm.forward(steps, /*train=*/false, drng);
    return mean_all(mul(h, h));
  };
  Tensor h = lstm.forward(steps, false, drng);
  CHECK(h.rows() == 2);
  CHECK(h.cols() == 4);
  CHECK(max_grad_rel_err(f, plist) < kTol);
}

TEST_CASE("transformer encoder gradients") {
  std::mt19937_64 rng(43);
  TransformerEncoder enc = TransformerEncoder::create(8, 2, 16, 1, rng);
  Tensor x = Tensor::randn({4, 8}, rng, 1.0, true);
  ParamMap params;
  enc.collect("enc", params);
  std::vector<Tensor> plist{x};
  for (auto& [k, p] : params) plist.push_back(p);
  auto f = [&] {
    Tensor y = enc.forward(x, /*tokens=*/2);
    return mean_all(mul(y, y));
  };
  CHECK(max_grad_rel_err(f, plist) < kTol);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  Tensor w = Tensor::from({1, 2}, {5.0, -3.0});
  w.set_requires_grad(true);
  ParamMap params{{"w", w}};
  Adam opt(0.05);
  for (int i = 0; i < 2000; ++i) {
    Tensor loss = mean_all(mul(w, w));
    backward(loss);
    opt.step(params);
  }
  CHECK(std::abs(w.value()[0]) < 1e-3);
  CHECK(std::abs(w.value()[1]) < 1e-3);
}

TEST_CASE("dropout is identity in eval mode and rescales in train mode") {
  std::mt19937_64 rng(47);
  Tensor x = Tensor::constant({100, 10}, 1.0);
  Tensor eval_out = dropout(x, 0.4, false, rng);
  CHECK((eval_out.value() - x.value()).abs().maxCoeff() == 0.0);
  Tensor train_out = dropout(x, 0.4, true, rng);
  // Inverted scaling keeps the mean near 1.
  CHECK(train_out.value().mean() == doctest::Approx(1.0).epsilon(0.1));
}
