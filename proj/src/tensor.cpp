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

#include "mmfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace mmfuse {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

NodePtr make_node(Shape s, ArrayX v, std::vector<NodePtr> parents) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(s);
  n->value = std::move(v);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

int cols_of(const TensorNode* n) {
  if (n->shape.empty()) return 1;
  int64_t r = n->shape[0];
  return static_cast<int>(r == 0 ? 0 : n->value.size() / r);
}

MapM matview(TensorNode* n) {
  return MapM(n->value.data(), n->shape.at(0), cols_of(n));
}

CMapM cmatview(const TensorNode* n) {
  return CMapM(n->value.data(), n->shape.at(0), cols_of(n));
}

void ensure_grad(TensorNode* n) {
  if (n->grad.size() == 0) n->grad = ArrayX::Zero(n->value.size());
}

MapM gradview(TensorNode* n) {
  ensure_grad(n);
  return MapM(n->grad.data(), n->shape.at(0), cols_of(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw MmfError(std::string(op) + ": shape mismatch " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void TensorNode::accumulate(const ArrayX& g) {
  if (grad.size() == 0) grad = ArrayX::Zero(value.size());
  grad += g;
}

void TensorNode::accumulate_mat(const Eigen::Ref<const MatRM>& g) {
  if (grad.size() == 0) grad = ArrayX::Zero(value.size());
  MapM(grad.data(), g.rows(), g.cols()) += g;
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  auto n = make_node(std::move(s), ArrayX(), {});
  n->value = ArrayX::Zero(numel(n->shape));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::constant(Shape s, double v) {
  auto n = make_node(std::move(s), ArrayX(), {});
  n->value = ArrayX::Constant(numel(n->shape), v);
  return Tensor(n);
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
  if (static_cast<int64_t>(v.size()) != numel(s)) {
    throw MmfError("Tensor::from: " + std::to_string(v.size()) +
                   " values for shape " + shape_str(s));
  }
  ArrayX a = Eigen::Map<const ArrayX>(v.data(), v.size());
  return from_array(std::move(s), std::move(a));
}

Tensor Tensor::from_array(Shape s, ArrayX v) {
  if (v.size() != numel(s)) {
    throw MmfError("Tensor::from_array: size mismatch for " + shape_str(s));
  }
  return Tensor(make_node(std::move(s), std::move(v), {}));
}

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  ArrayX v(numel(s));
  for (int64_t i = 0; i < v.size(); ++i) v[i] = dist(rng);
  auto t = from_array(std::move(s), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

int Tensor::cols() const { return cols_of(n_.get()); }

double Tensor::item() const {
  if (n_->value.size() != 1) {
    throw MmfError("item(): tensor has " + std::to_string(n_->value.size()) +
                   " elements");
  }
  return n_->value[0];
}

const ArrayX& Tensor::grad() const {
  ensure_grad(n_.get());
  return n_->grad;
}

void Tensor::zero_grad() {
  if (n_->grad.size()) n_->grad.setZero();
}

Tensor Tensor::detach() const {
  return from_array(n_->shape, n_->value);
}

Tensor Tensor::clone() const {
  auto t = from_array(n_->shape, n_->value);
  t.set_requires_grad(n_->requires_grad);
  return t;
}

double Tensor::at(int r, int c) const {
  return n_->value[static_cast<int64_t>(r) * cols() + c];
}

void backward(const Tensor& loss) {
  TensorNode* root = loss.node().get();
  if (root->size() != 1) throw MmfError("backward: loss must be scalar");
  if (!root->requires_grad) return;

  struct Frame {
    TensorNode* n;
    size_t i;
  };
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> order;
  std::vector<Frame> stack;
  seen.insert(root);
  stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.i < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root->accumulate(ArrayX::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && n->grad.size()) n->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.shape(), a.value() + b.value(), {a.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, pa, pb] {
    if (pa->requires_grad) pa->accumulate(self->grad);
    if (pb->requires_grad) pb->accumulate(self->grad);
  };
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.shape(), a.value() - b.value(), {a.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, pa, pb] {
    if (pa->requires_grad) pa->accumulate(self->grad);
    if (pb->requires_grad) pb->accumulate((-self->grad).eval());
  };
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto n = make_node(a.shape(), a.value() * b.value(), {a.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, pa, pb] {
    if (pa->requires_grad) pa->accumulate((self->grad * pb->value).eval());
    if (pb->requires_grad) pb->accumulate((self->grad * pa->value).eval());
  };
  return Tensor(n);
}

Tensor scale(const Tensor& a, double c) {
  auto n = make_node(a.shape(), a.value() * c, {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa, c] { pa->accumulate((self->grad * c).eval()); };
  return Tensor(n);
}

Tensor add_scalar(const Tensor& a, double c) {
  auto n = make_node(a.shape(), a.value() + c, {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] { pa->accumulate(self->grad); };
  return Tensor(n);
}

Tensor exp_(const Tensor& a) {
  auto n = make_node(a.shape(), a.value().exp(), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    pa->accumulate((self->grad * self->value).eval());
  };
  return Tensor(n);
}

Tensor log_(const Tensor& a) {
  auto n = make_node(a.shape(), a.value().log(), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    pa->accumulate((self->grad / pa->value).eval());
  };
  return Tensor(n);
}

Tensor sigmoid(const Tensor& a) {
  ArrayX v = 1.0 / (1.0 + (-a.value()).exp());
  auto n = make_node(a.shape(), std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    pa->accumulate((self->grad * self->value * (1.0 - self->value)).eval());
  };
  return Tensor(n);
}

Tensor tanh_(const Tensor& a) {
  auto n = make_node(a.shape(), a.value().tanh(), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    pa->accumulate((self->grad * (1.0 - self->value.square())).eval());
  };
  return Tensor(n);
}

Tensor relu(const Tensor& a) {
  auto n = make_node(a.shape(), a.value().max(0.0), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    ArrayX g = self->grad;
    for (int64_t i = 0; i < g.size(); ++i) {
      if (pa->value[i] <= 0.0) g[i] = 0.0;
    }
    pa->accumulate(g);
  };
  return Tensor(n);
}

Tensor gelu(const Tensor& a) {
  // Exact erf form: x * Phi(x).
  ArrayX v(a.size());
  for (int64_t i = 0; i < v.size(); ++i) {
    double x = a.value()[i];
    v[i] = 0.5 * x * (1.0 + std::erf(x / kSqrt2));
  }
  auto n = make_node(a.shape(), std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    ArrayX g(self->grad.size());
    for (int64_t i = 0; i < g.size(); ++i) {
      double x = pa->value[i];
      double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
      g[i] = self->grad[i] * (cdf + x * phi);
    }
    pa->accumulate(g);
  };
  return Tensor(n);
}

Tensor sum_all(const Tensor& a) {
  ArrayX v(1);
  v[0] = a.value().sum();
  auto n = make_node(Shape{1}, std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    pa->accumulate(ArrayX::Constant(pa->value.size(), self->grad[0]).eval());
  };
  return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != a.size()) {
    throw MmfError("reshape: incompatible " + shape_str(a.shape()) + " -> " +
                   shape_str(s));
  }
  auto n = make_node(std::move(s), a.value(), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] { pa->accumulate(self->grad); };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// 2-D ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw MmfError("matmul: " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  }
  ArrayX v(static_cast<int64_t>(a.rows()) * b.cols());
  MapM(v.data(), a.rows(), b.cols()) =
      cmatview(a.node().get()) * cmatview(b.node().get());
  auto n = make_node(Shape{a.rows(), b.cols()}, std::move(v),
                     {a.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, pa, pb] {
    MapM g = gradview(self);
    if (pa->requires_grad) pa->accumulate_mat(g * cmatview(pb).transpose());
    if (pb->requires_grad) pb->accumulate_mat(cmatview(pa).transpose() * g);
  };
  return Tensor(n);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw MmfError("matmul_nt: " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()) + "^T");
  }
  ArrayX v(static_cast<int64_t>(a.rows()) * b.rows());
  MapM(v.data(), a.rows(), b.rows()) =
      cmatview(a.node().get()) * cmatview(b.node().get()).transpose();
  auto n = make_node(Shape{a.rows(), b.rows()}, std::move(v),
                     {a.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, pa, pb] {
    MapM g = gradview(self);
    if (pa->requires_grad) pa->accumulate_mat(g * cmatview(pb));
    if (pb->requires_grad) pb->accumulate_mat(g.transpose() * cmatview(pa));
  };
  return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int nrows = x.rows();
  const int in = x.cols();
  const int out = w.rows();
  if (w.cols() != in) {
    throw MmfError("linear: input width " + std::to_string(in) +
                   " vs weight " + shape_str(w.shape()));
  }
  if (b.size() != out) throw MmfError("linear: bias size mismatch");
  ArrayX v(static_cast<int64_t>(nrows) * out);
  MapM y(v.data(), nrows, out);
  y = cmatview(x.node().get()) * cmatview(w.node().get()).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out);
  auto n = make_node(Shape{nrows, out}, std::move(v),
                     {x.node(), w.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  TensorNode* pw = w.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, px, pw, pb] {
    MapM g = gradview(self);
    if (px->requires_grad) px->accumulate_mat(g * cmatview(pw));
    if (pw->requires_grad)
      pw->accumulate_mat(g.transpose() * cmatview(px));
    if (pb->requires_grad) {
      ArrayX gb = g.colwise().sum().transpose().array();
      pb->accumulate(gb);
    }
  };
  return Tensor(n);
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.size() != x.cols()) throw MmfError("add_rowvec: width mismatch");
  ArrayX out(x.size());
  MapM y(out.data(), x.rows(), x.cols());
  y = cmatview(x.node().get());
  y.rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(v.value().data(), v.size());
  auto n = make_node(x.shape(), std::move(out), {x.node(), v.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  TensorNode* pv = v.node().get();
  n->backward_fn = [self, px, pv] {
    MapM g = gradview(self);
    if (px->requires_grad) px->accumulate(self->grad);
    if (pv->requires_grad) {
      ArrayX gv = g.colwise().sum().transpose().array();
      pv->accumulate(gv);
    }
  };
  return Tensor(n);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw MmfError("slice_cols: range");
  const int nrows = a.rows();
  const int w = c1 - c0;
  ArrayX v(static_cast<int64_t>(nrows) * w);
  MapM(v.data(), nrows, w) = cmatview(a.node().get()).middleCols(c0, w);
  auto n = make_node(Shape{nrows, w}, std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa, c0, w] {
    ensure_grad(pa);
    MapM(pa->grad.data(), pa->shape[0], cols_of(pa)).middleCols(c0, w) +=
        gradview(self);
  };
  return Tensor(n);
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw MmfError("slice_rows: range");
  const int w = a.cols();
  const int h = r1 - r0;
  ArrayX v = a.value().segment(static_cast<int64_t>(r0) * w,
                               static_cast<int64_t>(h) * w);
  auto n = make_node(Shape{h, w}, std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa, r0, h, w] {
    ensure_grad(pa);
    pa->grad.segment(static_cast<int64_t>(r0) * w,
                     static_cast<int64_t>(h) * w) += self->grad;
  };
  return Tensor(n);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw MmfError("concat_rows: empty");
  const int w = parts[0].cols();
  int h = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.cols() != w) throw MmfError("concat_rows: width mismatch");
    h += p.rows();
    parents.push_back(p.node());
  }
  ArrayX v(static_cast<int64_t>(h) * w);
  int64_t off = 0;
  for (const auto& p : parts) {
    v.segment(off, p.size()) = p.value();
    off += p.size();
  }
  auto n = make_node(Shape{h, w}, std::move(v), std::move(parents));
  TensorNode* self = n.get();
  n->backward_fn = [self] {
    int64_t off = 0;
    for (const auto& p : self->parents) {
      if (p->requires_grad)
        p->accumulate(self->grad.segment(off, p->value.size()).eval());
      off += p->value.size();
    }
  };
  return Tensor(n);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw MmfError("concat_cols: empty");
  const int h = parts[0].rows();
  int w = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != h) throw MmfError("concat_cols: height mismatch");
    w += p.cols();
    parents.push_back(p.node());
  }
  ArrayX v(static_cast<int64_t>(h) * w);
  MapM y(v.data(), h, w);
  int c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = cmatview(p.node().get());
    c += p.cols();
  }
  auto n = make_node(Shape{h, w}, std::move(v), std::move(parents));
  TensorNode* self = n.get();
  n->backward_fn = [self] {
    MapM g = gradview(self);
    int c = 0;
    for (const auto& p : self->parents) {
      int pc = cols_of(p.get());
      if (p->requires_grad)
        p->accumulate_mat(g.middleCols(c, pc));
      c += pc;
    }
  };
  return Tensor(n);
}

Tensor repeat_row(const Tensor& v, int n_rows) {
  const int w = static_cast<int>(v.size());
  ArrayX out(static_cast<int64_t>(n_rows) * w);
  MapM y(out.data(), n_rows, w);
  y.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(v.value().data(), w);
  auto n = make_node(Shape{n_rows, w}, std::move(out), {v.node()});
  TensorNode* self = n.get();
  TensorNode* pv = v.node().get();
  n->backward_fn = [self, pv] {
    MapM g = gradview(self);
    ArrayX gv = g.colwise().sum().transpose().array();
    pv->accumulate(gv);
  };
  return Tensor(n);
}

Tensor softmax_rows(const Tensor& a) {
  ArrayX v(a.size());
  MapM y(v.data(), a.rows(), a.cols());
  CMapM x = cmatview(a.node().get());
  for (int r = 0; r < a.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  auto n = make_node(a.shape(), std::move(v), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa] {
    MapM g = gradview(self);
    MapM y = matview(self);
    MatRM dx(g.rows(), g.cols());
    for (int r = 0; r < g.rows(); ++r) {
      double dot = (g.row(r).array() * y.row(r).array()).sum();
      dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
    }
    pa->accumulate_mat(dx);
  };
  return Tensor(n);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  const int nrows = x.rows();
  const int c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw MmfError("layer_norm_rows: parameter width mismatch");
  }
  ArrayX v(x.size());
  auto xhat = std::make_shared<MatRM>(nrows, c);
  auto inv_std = std::make_shared<Eigen::VectorXd>(nrows);
  {
    CMapM xm = cmatview(x.node().get());
    MapM y(v.data(), nrows, c);
    Eigen::Map<const Eigen::RowVectorXd> g(gain.value().data(), c);
    Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), c);
    for (int r = 0; r < nrows; ++r) {
      double mu = xm.row(r).mean();
      double var = (xm.row(r).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      xhat->row(r) = (xm.row(r).array() - mu) * is;
      y.row(r) = xhat->row(r).cwiseProduct(g) + b;
    }
  }
  auto n = make_node(x.shape(), std::move(v),
                     {x.node(), gain.node(), bias.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  TensorNode* pg = gain.node().get();
  TensorNode* pb = bias.node().get();
  n->backward_fn = [self, px, pg, pb, xhat, inv_std, c] {
    MapM g = gradview(self);
    Eigen::Map<const Eigen::RowVectorXd> gain(pg->value.data(), c);
    if (px->requires_grad) {
      MatRM dx(g.rows(), c);
      for (int r = 0; r < g.rows(); ++r) {
        Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain);
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
        dx.row(r) =
            ((dxhat.array() - m1) - xhat->row(r).array() * m2) * (*inv_std)[r];
      }
      px->accumulate_mat(dx);
    }
    if (pg->requires_grad) {
      ArrayX dg = (g.array() * xhat->array()).colwise().sum().transpose();
      pg->accumulate(dg);
    }
    if (pb->requires_grad) {
      ArrayX db = g.colwise().sum().transpose().array();
      pb->accumulate(db);
    }
  };
  return Tensor(n);
}

Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw MmfError("dropout: p out of range");
  if (!train || p == 0.0) return a;
  auto mask = std::make_shared<ArrayX>(a.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 - p;
  for (int64_t i = 0; i < a.size(); ++i) {
    (*mask)[i] = u(rng) < keep ? 1.0 / keep : 0.0;
  }
  auto n = make_node(a.shape(), (a.value() * (*mask)).eval(), {a.node()});
  TensorNode* self = n.get();
  TensorNode* pa = a.node().get();
  n->backward_fn = [self, pa, mask] {
    pa->accumulate((self->grad * (*mask)).eval());
  };
  return Tensor(n);
}

Tensor mean_pool_groups(const Tensor& x, int group) {
  if (x.rows() % group != 0) throw MmfError("mean_pool_groups: row count");
  const int n_out = x.rows() / group;
  const int c = x.cols();
  ArrayX v(static_cast<int64_t>(n_out) * c);
  MapM y(v.data(), n_out, c);
  CMapM xm = cmatview(x.node().get());
  for (int i = 0; i < n_out; ++i) {
    y.row(i) = xm.middleRows(i * group, group).colwise().mean();
  }
  auto n = make_node(Shape{n_out, c}, std::move(v), {x.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  n->backward_fn = [self, px, group] {
    MapM g = gradview(self);
    ensure_grad(px);
    MapM gx(px->grad.data(), px->shape[0], cols_of(px));
    const double inv = 1.0 / group;
    for (int i = 0; i < g.rows(); ++i) {
      for (int t = 0; t < group; ++t) {
        gx.row(i * group + t) += g.row(i) * inv;
      }
    }
  };
  return Tensor(n);
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int tokens, int heads) {
  const int total = q.rows();
  const int d = q.cols();
  if (total % tokens != 0 || d % heads != 0) {
    throw MmfError("multihead_attention: bad geometry");
  }
  check_same_shape(q, k, "multihead_attention");
  check_same_shape(q, v, "multihead_attention");
  const int n_samples = total / tokens;
  const int dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  ArrayX out = ArrayX::Zero(q.size());
  // Softmax probabilities per (sample, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<MatRM>>();
  probs->reserve(static_cast<size_t>(n_samples) * heads);
  {
    CMapM qm = cmatview(q.node().get());
    CMapM km = cmatview(k.node().get());
    CMapM vm = cmatview(v.node().get());
    MapM om(out.data(), total, d);
    for (int s = 0; s < n_samples; ++s) {
      for (int h = 0; h < heads; ++h) {
        auto qb = qm.block(s * tokens, h * dk, tokens, dk);
        auto kb = km.block(s * tokens, h * dk, tokens, dk);
        auto vb = vm.block(s * tokens, h * dk, tokens, dk);
        MatRM scores = qb * kb.transpose() * inv_sqrt;
        for (int r = 0; r < tokens; ++r) {
          double mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        om.block(s * tokens, h * dk, tokens, dk) = scores * vb;
        probs->push_back(std::move(scores));
      }
    }
  }
  auto n = make_node(q.shape(), std::move(out), {q.node(), k.node(), v.node()});
  TensorNode* self = n.get();
  TensorNode* pq = q.node().get();
  TensorNode* pk = k.node().get();
  TensorNode* pv = v.node().get();
  n->backward_fn = [self, pq, pk, pv, probs, tokens, heads, dk, inv_sqrt,
                    n_samples] {
    MapM g = gradview(self);
    ensure_grad(pq);
    ensure_grad(pk);
    ensure_grad(pv);
    MapM gq(pq->grad.data(), pq->shape[0], cols_of(pq));
    MapM gk(pk->grad.data(), pk->shape[0], cols_of(pk));
    MapM gv(pv->grad.data(), pv->shape[0], cols_of(pv));
    CMapM qm = cmatview(pq);
    CMapM km = cmatview(pk);
    CMapM vm = cmatview(pv);
    for (int s = 0; s < n_samples; ++s) {
      for (int h = 0; h < heads; ++h) {
        const MatRM& p = (*probs)[static_cast<size_t>(s) * heads + h];
        auto qb = qm.block(s * tokens, h * dk, tokens, dk);
        auto kb = km.block(s * tokens, h * dk, tokens, dk);
        auto vb = vm.block(s * tokens, h * dk, tokens, dk);
        auto go = g.block(s * tokens, h * dk, tokens, dk);
        gv.block(s * tokens, h * dk, tokens, dk) += p.transpose() * go;
        MatRM dp = go * vb.transpose();
        MatRM ds(tokens, tokens);
        for (int r = 0; r < tokens; ++r) {
          double dot = (dp.row(r).array() * p.row(r).array()).sum();
          ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        gq.block(s * tokens, h * dk, tokens, dk) += ds * kb * inv_sqrt;
        gk.block(s * tokens, h * dk, tokens, dk) +=
            ds.transpose() * qb * inv_sqrt;
      }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeom {
  int C, H, W, F, K, stride, pad, OH, OW;
};

ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 4 || ws.size() != 4) throw MmfError("conv2d: rank");
  if (ws[1] != xs[1] || ws[2] != ws[3]) throw MmfError("conv2d: kernel shape");
  ConvGeom g;
  g.C = xs[1];
  g.H = xs[2];
  g.W = xs[3];
  g.F = ws[0];
  g.K = ws[2];
  g.stride = stride;
  g.pad = pad;
  g.OH = (g.H + 2 * pad - g.K) / stride + 1;
  g.OW = (g.W + 2 * pad - g.K) / stride + 1;
  if (g.OH <= 0 || g.OW <= 0) throw MmfError("conv2d: empty output");
  return g;
}

// col is (C*K*K) x (OH*OW).
void im2col(const double* x, const ConvGeom& g, MatRM& col) {
  for (int c = 0; c < g.C; ++c) {
    const double* xc = x + static_cast<int64_t>(c) * g.H * g.W;
    for (int ki = 0; ki < g.K; ++ki) {
      for (int kj = 0; kj < g.K; ++kj) {
        const int row = (c * g.K + ki) * g.K + kj;
        double* dst = col.data() + static_cast<int64_t>(row) * g.OH * g.OW;
        for (int oy = 0; oy < g.OH; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.H) {
            std::fill(dst + oy * g.OW, dst + (oy + 1) * g.OW, 0.0);
            continue;
          }
          for (int ox = 0; ox < g.OW; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[oy * g.OW + ox] =
                (ix < 0 || ix >= g.W) ? 0.0 : xc[iy * g.W + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const MatRM& col, const ConvGeom& g, double* dx) {
  for (int c = 0; c < g.C; ++c) {
    double* xc = dx + static_cast<int64_t>(c) * g.H * g.W;
    for (int ki = 0; ki < g.K; ++ki) {
      for (int kj = 0; kj < g.K; ++kj) {
        const int row = (c * g.K + ki) * g.K + kj;
        const double* src = col.data() + static_cast<int64_t>(row) * g.OH * g.OW;
        for (int oy = 0; oy < g.OH; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.H) continue;
          for (int ox = 0; ox < g.OW; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix < 0 || ix >= g.W) continue;
            xc[iy * g.W + ix] += src[oy * g.OW + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad);
  const int N = x.shape()[0];
  if (b.size() != g.F) throw MmfError("conv2d: bias size");
  const int64_t kk = static_cast<int64_t>(g.C) * g.K * g.K;
  const int64_t ohw = static_cast<int64_t>(g.OH) * g.OW;
  ArrayX out(static_cast<int64_t>(N) * g.F * ohw);
  {
    CMapM wm(w.value().data(), g.F, kk);
    Eigen::Map<const Eigen::VectorXd> bv(b.value().data(), g.F);
    MatRM col(kk, ohw);
    for (int s = 0; s < N; ++s) {
      im2col(x.value().data() + static_cast<int64_t>(s) * g.C * g.H * g.W, g,
             col);
      MapM y(out.data() + static_cast<int64_t>(s) * g.F * ohw, g.F, ohw);
      y.noalias() = wm * col;
      y.colwise() += bv;
    }
  }
  auto n = make_node(Shape{N, g.F, g.OH, g.OW}, std::move(out),
                     {x.node(), w.node(), b.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  TensorNode* pw = w.node().get();
  TensorNode* pb = b.node().get();
  n->backward_fn = [self, px, pw, pb, g, N, kk, ohw] {
    ensure_grad(self);
    CMapM wm(pw->value.data(), g.F, kk);
    MatRM col(kk, ohw);
    if (pw->requires_grad) ensure_grad(pw);
    if (px->requires_grad) ensure_grad(px);
    if (pb->requires_grad) ensure_grad(pb);
    for (int s = 0; s < N; ++s) {
      CMapM gy(self->grad.data() + static_cast<int64_t>(s) * g.F * ohw, g.F,
               ohw);
      if (pw->requires_grad || px->requires_grad) {
        im2col(px->value.data() + static_cast<int64_t>(s) * g.C * g.H * g.W, g,
               col);
      }
      if (pw->requires_grad) {
        MapM gw(pw->grad.data(), g.F, kk);
        gw.noalias() += gy * col.transpose();
      }
      if (pb->requires_grad) {
        Eigen::Map<Eigen::VectorXd> gb(pb->grad.data(), g.F);
        gb += gy.rowwise().sum();
      }
      if (px->requires_grad) {
        MatRM dcol = wm.transpose() * gy;
        col2im_add(dcol, g,
                   px->grad.data() + static_cast<int64_t>(s) * g.C * g.H * g.W);
      }
    }
  };
  return Tensor(n);
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    ArrayX& running_mean, ArrayX& running_var, bool train,
                    double momentum, double eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw MmfError("batch_norm2d: rank");
  const int N = xs[0], C = xs[1];
  const int64_t hw = static_cast<int64_t>(xs[2]) * xs[3];
  if (gamma.size() != C || beta.size() != C) {
    throw MmfError("batch_norm2d: parameter width");
  }
  const int64_t m = N * hw;
  auto mean = std::make_shared<ArrayX>(C);
  auto inv_std = std::make_shared<ArrayX>(C);
  ArrayX out(x.size());
  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (train) {
      double sum = 0.0, sq = 0.0;
      for (int s = 0; s < N; ++s) {
        const double* p =
            x.value().data() + (static_cast<int64_t>(s) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      mu = sum / m;
      var = sq / m - mu * mu;
      if (var < 0) var = 0;
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
      const double unbiased = m > 1 ? var * m / (m - 1.0) : var;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean)[c] = mu;
    (*inv_std)[c] = is;
    const double gsc = gamma.value()[c] * is;
    const double bias = beta.value()[c] - mu * gsc;
    for (int s = 0; s < N; ++s) {
      const double* p =
          x.value().data() + (static_cast<int64_t>(s) * C + c) * hw;
      double* q = out.data() + (static_cast<int64_t>(s) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = p[i] * gsc + bias;
    }
  }
  auto n =
      make_node(xs, std::move(out), {x.node(), gamma.node(), beta.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  TensorNode* pg = gamma.node().get();
  TensorNode* pb = beta.node().get();
  n->backward_fn = [self, px, pg, pb, mean, inv_std, train, N, C, hw, m] {
    ensure_grad(self);
    if (px->requires_grad) ensure_grad(px);
    if (pg->requires_grad) ensure_grad(pg);
    if (pb->requires_grad) ensure_grad(pb);
    for (int c = 0; c < C; ++c) {
      const double mu = (*mean)[c];
      const double is = (*inv_std)[c];
      const double gam = pg->value[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (int s = 0; s < N; ++s) {
        const int64_t off = (static_cast<int64_t>(s) * C + c) * hw;
        const double* gy = self->grad.data() + off;
        const double* xv = px->value.data() + off;
        for (int64_t i = 0; i < hw; ++i) {
          sum_g += gy[i];
          sum_gx += gy[i] * (xv[i] - mu) * is;
        }
      }
      if (pg->requires_grad) pg->grad[c] += sum_gx;
      if (pb->requires_grad) pb->grad[c] += sum_g;
      if (!px->requires_grad) continue;
      if (train) {
        const double k1 = gam * is;
        for (int s = 0; s < N; ++s) {
          const int64_t off = (static_cast<int64_t>(s) * C + c) * hw;
          const double* gy = self->grad.data() + off;
          const double* xv = px->value.data() + off;
          double* gx = px->grad.data() + off;
          for (int64_t i = 0; i < hw; ++i) {
            const double xhat = (xv[i] - mu) * is;
            gx[i] += k1 * (gy[i] - sum_g / m - xhat * sum_gx / m);
          }
        }
      } else {
        const double k1 = gam * is;
        for (int s = 0; s < N; ++s) {
          const int64_t off = (static_cast<int64_t>(s) * C + c) * hw;
          const double* gy = self->grad.data() + off;
          double* gx = px->grad.data() + off;
          for (int64_t i = 0; i < hw; ++i) gx[i] += k1 * gy[i];
        }
      }
    }
  };
  return Tensor(n);
}

Tensor max_pool2d(const Tensor& x, int k, int stride, int pad) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw MmfError("max_pool2d: rank");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int OH = (H + 2 * pad - k) / stride + 1;
  const int OW = (W + 2 * pad - k) / stride + 1;
  if (OH <= 0 || OW <= 0) throw MmfError("max_pool2d: empty output");
  ArrayX out(static_cast<int64_t>(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  int64_t oi = 0;
  for (int s = 0; s < N; ++s) {
    for (int c = 0; c < C; ++c) {
      const int64_t base = (static_cast<int64_t>(s) * C + c) * H * W;
      const double* xp = x.value().data() + base;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= H) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= W) continue;
              const double v = xp[iy * W + ix];
              if (v > best) {
                best = v;
                best_idx = base + iy * W + ix;
              }
            }
          }
          out[oi] = best;
          (*argmax)[oi] = best_idx;
        }
      }
    }
  }
  auto n = make_node(Shape{N, C, OH, OW}, std::move(out), {x.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  n->backward_fn = [self, px, argmax] {
    ensure_grad(px);
    for (int64_t i = 0; i < self->grad.size(); ++i) {
      px->grad[(*argmax)[i]] += self->grad[i];
    }
  };
  return Tensor(n);
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw MmfError("global_avg_pool: rank");
  const int N = xs[0], C = xs[1];
  const int64_t hw = static_cast<int64_t>(xs[2]) * xs[3];
  ArrayX out(static_cast<int64_t>(N) * C);
  for (int s = 0; s < N; ++s) {
    for (int c = 0; c < C; ++c) {
      out[s * C + c] =
          x.value()
              .segment((static_cast<int64_t>(s) * C + c) * hw, hw)
              .mean();
    }
  }
  auto n = make_node(Shape{N, C}, std::move(out), {x.node()});
  TensorNode* self = n.get();
  TensorNode* px = x.node().get();
  n->backward_fn = [self, px, N, C, hw] {
    ensure_grad(px);
    const double inv = 1.0 / hw;
    for (int s = 0; s < N; ++s) {
      for (int c = 0; c < C; ++c) {
        px->grad.segment((static_cast<int64_t>(s) * C + c) * hw, hw) +=
            self->grad[s * C + c] * inv;
      }
    }
  };
  return Tensor(n);
}

Tensor bce_with_logits_per_task(const Tensor& logits, const Tensor& labels) {
  check_same_shape(logits, labels, "bce_with_logits_per_task");
  const int N = logits.rows();
  const int T = logits.cols();
  for (int64_t i = 0; i < labels.size(); ++i) {
    const double y = labels.value()[i];
    if (y != 0.0 && y != 1.0) {
      throw MmfError("bce_with_logits_per_task: label not in {0,1}");
    }
  }
  ArrayX out = ArrayX::Zero(T);
  for (int r = 0; r < N; ++r) {
    for (int t = 0; t < T; ++t) {
      const double xv = logits.value()[static_cast<int64_t>(r) * T + t];
      const double y = labels.value()[static_cast<int64_t>(r) * T + t];
      out[t] += std::max(xv, 0.0) - xv * y + std::log1p(std::exp(-std::abs(xv)));
    }
  }
  out /= N;
  auto n = make_node(Shape{1, T}, std::move(out), {logits.node(), labels.node()});
  TensorNode* self = n.get();
  TensorNode* pl = logits.node().get();
  TensorNode* py = labels.node().get();
  n->backward_fn = [self, pl, py, N, T] {
    if (!pl->requires_grad) return;
    ensure_grad(pl);
    for (int r = 0; r < N; ++r) {
      for (int t = 0; t < T; ++t) {
        const int64_t i = static_cast<int64_t>(r) * T + t;
        const double p = 1.0 / (1.0 + std::exp(-pl->value[i]));
        pl->grad[i] += self->grad[t] * (p - py->value[i]) / N;
      }
    }
  };
  return Tensor(n);
}

}  // namespace mmfuse
