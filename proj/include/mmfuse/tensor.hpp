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

// Reverse-mode autodiff over flat double buffers, backed by Eigen. The graph
// is a tape of shared_ptr-linked nodes; intermediates are freed when the last
// Tensor handle referencing them goes out of scope after backward().

#ifndef MMFUSE_TENSOR_HPP_
#define MMFUSE_TENSOR_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfuse {

using Shape = std::vector<int>;
using ArrayX = Eigen::ArrayXd;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

class MmfError : public std::runtime_error {
 public:
  explicit MmfError(const std::string& what) : std::runtime_error(what) {}
};

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  ArrayX value;
  ArrayX grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  int64_t size() const { return value.size(); }
  void accumulate(const ArrayX& g);
  void accumulate_mat(const Eigen::Ref<const MatRM>& g);
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor constant(Shape s, double v);
  static Tensor from(Shape s, std::vector<double> v);
  static Tensor from_array(Shape s, ArrayX v);
  static Tensor randn(Shape s, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t size() const { return n_->value.size(); }
  int rows() const { return n_->shape.at(0); }
  int cols() const;
  double item() const;
  ArrayX& value() { return n_->value; }
  const ArrayX& value() const { return n_->value; }
  const ArrayX& grad() const;
  void zero_grad();
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool r) { n_->requires_grad = r; }
  Tensor detach() const;
  Tensor clone() const;
  const NodePtr& node() const { return n_; }

  // 2-D element access, row-major; for tests and glue code.
  double at(int r, int c) const;

 private:
  NodePtr n_;
};

void backward(const Tensor& loss);

// Elementwise and structural ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor reshape(const Tensor& a, Shape s);

// 2-D ops; shapes are {rows, cols}.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w^T + b
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor repeat_row(const Tensor& v, int n);  // {1,C} -> {n,C}
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng);
// (N*T)xC -> NxC, mean over each run of `group` consecutive rows.
Tensor mean_pool_groups(const Tensor& x, int group);

// Scaled-dot-product attention. q,k,v are (N*tokens)x(heads*dk) with each
// head occupying a contiguous column block; rows are sample-major.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int tokens, int heads);

// Convolutional stack, NCHW layout {N,C,H,W}.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    ArrayX& running_mean, ArrayX& running_var, bool train,
                    double momentum = 0.1, double eps = 1e-5);
Tensor max_pool2d(const Tensor& x, int k, int stride, int pad);
Tensor global_avg_pool(const Tensor& x);  // {N,C,H,W} -> {N,C}

// Mean over the batch of the numerically stable binary cross-entropy with
// logits, reduced per column: {N,T} logits and labels -> {1,T}.
Tensor bce_with_logits_per_task(const Tensor& logits, const Tensor& labels);

}  // namespace mmfuse

#endif  // MMFUSE_TENSOR_HPP_
