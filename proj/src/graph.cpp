// Copyright 2026 The APIAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "apiae/graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "apiae/errors.hpp"

namespace apiae::graph {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape(const Tensor& t) {
  std::ostringstream os;
  os << '[' << t.rows() << 'x' << t.cols() << ']';
  return os.str();
}

[[noreturn]] void shape_error(Op op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op_name(op)) + ": incompatible shapes " + shape(a) +
                              " and " + shape(b));
}

[[noreturn]] void shape_error(Op op, const Tensor& a, const std::string& what) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + what + ", got " + shape(a));
}

[[noreturn]] void domain_error(Op op, const Tensor& a) {
  throw NumericalError(std::string(op_name(op)) + ": requires strictly positive entries, got " + shape(a));
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax_rows_value(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Tensor lower_solve(const Tensor& L, const Tensor& B) {
  return L.triangularView<Eigen::Lower>().solve(B);
}

Tensor lower_transpose_solve(const Tensor& L, const Tensor& B) {
  return L.transpose().triangularView<Eigen::Upper>().solve(B);
}

Tensor forward(Op op, const Tensor* a, const Tensor* b, const OpParams& p) {
  switch (op) {
    case Op::leaf:
      throw std::logic_error("forward: leaf has no rule");
    case Op::matmul:
      if (a->cols() != b->rows()) shape_error(op, *a, *b);
      return (*a) * (*b);
    case Op::add:
      if (a->rows() != b->rows() || a->cols() != b->cols()) shape_error(op, *a, *b);
      return *a + *b;
    case Op::subtract:
      if (a->rows() != b->rows() || a->cols() != b->cols()) shape_error(op, *a, *b);
      return *a - *b;
    case Op::cwise_mul:
      if (a->rows() != b->rows() || a->cols() != b->cols()) shape_error(op, *a, *b);
      return a->cwiseProduct(*b);
    case Op::scale:
      return p.a * (*a);
    case Op::shift:
      return (a->array() + p.a).matrix();
    case Op::tanh:
      return a->array().tanh().matrix();
    case Op::relu:
      return a->cwiseMax(0.0);
    case Op::sigmoid:
      return a->unaryExpr(&stable_sigmoid);
    case Op::softplus:
      return a->unaryExpr(&stable_softplus);
    case Op::exp:
      return a->array().exp().matrix();
    case Op::log:
      if ((a->array() <= 0.0).any()) domain_error(op, *a);
      return a->array().log().matrix();
    case Op::square:
      return a->array().square().matrix();
    case Op::sqrt:
      if ((a->array() <= 0.0).any()) domain_error(op, *a);
      return a->array().sqrt().matrix();
    case Op::clamp:
      return a->cwiseMax(p.a).cwiseMin(p.b);
    case Op::softmax_rows:
      return softmax_rows_value(*a);
    case Op::logsumexp: {
      const double m = a->maxCoeff();
      Tensor out(1, 1);
      out(0, 0) = m + std::log((a->array() - m).exp().sum());
      return out;
    }
    case Op::sum:
      return Tensor::Constant(1, 1, a->sum());
    case Op::mean:
      return Tensor::Constant(1, 1, a->mean());
    case Op::concat_cols: {
      if (a->rows() != b->rows()) shape_error(op, *a, *b);
      Tensor out(a->rows(), a->cols() + b->cols());
      out << *a, *b;
      return out;
    }
    case Op::concat_rows: {
      if (a->cols() != b->cols()) shape_error(op, *a, *b);
      Tensor out(a->rows() + b->rows(), a->cols());
      out << *a, *b;
      return out;
    }
    case Op::slice:
      if (p.r0 < 0 || p.c0 < 0 || p.rows <= 0 || p.cols <= 0 || p.r0 + p.rows > a->rows() ||
          p.c0 + p.cols > a->cols())
        shape_error(op, *a, "block out of range");
      return a->block(p.r0, p.c0, p.rows, p.cols);
    case Op::transpose:
      return a->transpose();
    case Op::reshape: {
      if (p.rows * p.cols != a->size()) shape_error(op, *a, "element count mismatch");
      RowMajor rm = *a;
      return Eigen::Map<const RowMajor>(rm.data(), p.rows, p.cols);
    }
    case Op::quad_form:
      if (a->cols() != 1 || b->rows() != a->rows() || b->cols() != a->rows())
        shape_error(op, *a, *b);
      return a->transpose() * (*b) * (*a);
    case Op::cholesky: {
      if (a->rows() != a->cols()) shape_error(op, *a, "requires a square matrix");
      Eigen::LLT<Tensor> llt(*a);
      if (llt.info() != Eigen::Success) throw NumericalError("cholesky: matrix not positive definite");
      return llt.matrixL();
    }
    case Op::solve_lower: {
      if (a->rows() != a->cols() || b->rows() != a->rows()) shape_error(op, *a, *b);
      if ((a->diagonal().array() == 0.0).any()) throw NumericalError("solve_lower: singular factor");
      return lower_solve(*a, *b);
    }
    case Op::gather_rows: {
      Tensor out(static_cast<Index>(p.index.size()), a->cols());
      for (std::size_t i = 0; i < p.index.size(); ++i) {
        if (p.index[i] < 0 || p.index[i] >= a->rows()) shape_error(op, *a, "row index out of range");
        out.row(static_cast<Index>(i)) = a->row(p.index[i]);
      }
      return out;
    }
    case Op::diagonal:
      if (a->rows() != a->cols()) shape_error(op, *a, "requires a square matrix");
      return a->diagonal();
    case Op::tril_pack: {
      const Index n = p.rows;
      if (a->size() != n * (n + 1) / 2) shape_error(op, *a, "packed size mismatch");
      Tensor out = Tensor::Zero(n, n);
      Index k = 0;
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j <= i; ++j) out(i, j) = a->data()[k++];
      return out;
    }
  }
  throw std::logic_error("forward: unknown op");
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::cwise_mul: return "elementwise-multiply";
    case Op::scale: return "scalar-multiply";
    case Op::shift: return "shift";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::softplus: return "softplus";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::square: return "square";
    case Op::sqrt: return "sqrt";
    case Op::clamp: return "clamp";
    case Op::softmax_rows: return "softmax";
    case Op::logsumexp: return "log-sum-exp";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::concat_cols: return "concat-cols";
    case Op::concat_rows: return "concat-rows";
    case Op::slice: return "slice";
    case Op::transpose: return "transpose";
    case Op::reshape: return "reshape";
    case Op::quad_form: return "quadratic-form";
    case Op::cholesky: return "cholesky";
    case Op::solve_lower: return "solve-lower";
    case Op::gather_rows: return "gather-rows";
    case Op::diagonal: return "diagonal";
    case Op::tril_pack: return "tril-pack";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar(): node is " + shape(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Tensor Gradients::operator[](Var v) const {
  const auto id = static_cast<std::size_t>(v.id());
  if (id < grads_.size() && grads_[id].size() > 0) return grads_[id];
  return Tensor::Zero(v.rows(), v.cols());
}

bool Gradients::touched(Var v) const {
  const auto id = static_cast<std::size_t>(v.id());
  return id < grads_.size() && grads_[id].size() > 0;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.allFinite()) throw NumericalError("leaf: non-finite constant");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  if (!value.allFinite()) throw NumericalError("leaf: non-finite variable");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, OpParams params) {
  if (inputs.size() > 2) throw std::invalid_argument("record: at most two inputs");
  Node n;
  n.op = op;
  const Tensor* vals[2] = {nullptr, nullptr};
  int slot = 0;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("record: input belongs to another tape");
    n.inputs[static_cast<std::size_t>(slot)] = v.id();
    vals[slot] = &node(v.id()).value;
    n.requires_grad = n.requires_grad || node(v.id()).requires_grad;
    ++slot;
  }
  n.value = forward(op, vals[0], vals[1], params);
  if (!n.value.allFinite())
    throw NumericalError(std::string(op_name(op)) + ": non-finite result " + shape(n.value));
  n.params = std::move(params);
  return push(std::move(n));
}

Gradients Tape::backward(Var root) const {
  if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (root.value().size() != 1) throw std::invalid_argument("backward: root must be scalar, got " +
                                                            shape(root.value()));
  std::vector<Tensor> g(nodes_.size());
  g[static_cast<std::size_t>(root.id())] = Tensor::Ones(1, 1);

  auto need = [&](int id) { return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad; };
  auto acc = [&](int id, const Tensor& delta) {
    auto& slot = g[static_cast<std::size_t>(id)];
    if (slot.size() == 0) slot = delta;
    else slot += delta;
  };

  for (int id = root.id(); id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& gy = g[static_cast<std::size_t>(id)];
    if (n.op == Op::leaf || !n.requires_grad || gy.size() == 0) continue;
    const int ia = n.inputs[0];
    const int ib = n.inputs[1];
    const Tensor& y = n.value;
    const Tensor* x = ia >= 0 ? &nodes_[static_cast<std::size_t>(ia)].value : nullptr;
    const Tensor* x2 = ib >= 0 ? &nodes_[static_cast<std::size_t>(ib)].value : nullptr;
    const auto& p = n.params;

    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul:
        if (need(ia)) acc(ia, gy * x2->transpose());
        if (need(ib)) acc(ib, x->transpose() * gy);
        break;
      case Op::add:
        if (need(ia)) acc(ia, gy);
        if (need(ib)) acc(ib, gy);
        break;
      case Op::subtract:
        if (need(ia)) acc(ia, gy);
        if (need(ib)) acc(ib, -gy);
        break;
      case Op::cwise_mul:
        if (need(ia)) acc(ia, gy.cwiseProduct(*x2));
        if (need(ib)) acc(ib, gy.cwiseProduct(*x));
        break;
      case Op::scale:
        if (need(ia)) acc(ia, p.a * gy);
        break;
      case Op::shift:
        if (need(ia)) acc(ia, gy);
        break;
      case Op::tanh:
        if (need(ia)) acc(ia, gy.cwiseProduct((1.0 - y.array().square()).matrix()));
        break;
      case Op::relu:
        // subgradient 0 at exactly 0
        if (need(ia)) acc(ia, gy.cwiseProduct((x->array() > 0.0).cast<double>().matrix()));
        break;
      case Op::sigmoid:
        if (need(ia)) acc(ia, gy.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
        break;
      case Op::softplus:
        if (need(ia)) acc(ia, gy.cwiseProduct(x->unaryExpr(&stable_sigmoid)));
        break;
      case Op::exp:
        if (need(ia)) acc(ia, gy.cwiseProduct(y));
        break;
      case Op::log:
        if (need(ia)) acc(ia, gy.cwiseQuotient(*x));
        break;
      case Op::square:
        if (need(ia)) acc(ia, 2.0 * gy.cwiseProduct(*x));
        break;
      case Op::sqrt:
        if (need(ia)) acc(ia, (0.5 * gy.array() / y.array()).matrix());
        break;
      case Op::clamp:
        if (need(ia)) acc(ia, gy.cwiseProduct(((x->array() >= p.a) && (x->array() <= p.b)).cast<double>().matrix()));
        break;
      case Op::softmax_rows: {
        const Eigen::VectorXd dots = gy.cwiseProduct(y).rowwise().sum();
        if (need(ia)) acc(ia, (y.array() * (gy.colwise() - dots).array()).matrix());
        break;
      }
      case Op::logsumexp:
        if (need(ia)) acc(ia, gy(0, 0) * (x->array() - y(0, 0)).exp().matrix());
        break;
      case Op::sum:
        if (need(ia)) acc(ia, Tensor::Constant(x->rows(), x->cols(), gy(0, 0)));
        break;
      case Op::mean:
        if (need(ia)) acc(ia, Tensor::Constant(x->rows(), x->cols(), gy(0, 0) / static_cast<double>(x->size())));
        break;
      case Op::concat_cols:
        if (need(ia)) acc(ia, gy.leftCols(x->cols()));
        if (need(ib)) acc(ib, gy.rightCols(x2->cols()));
        break;
      case Op::concat_rows:
        if (need(ia)) acc(ia, gy.topRows(x->rows()));
        if (need(ib)) acc(ib, gy.bottomRows(x2->rows()));
        break;
      case Op::slice: {
        Tensor d = Tensor::Zero(x->rows(), x->cols());
        d.block(p.r0, p.c0, p.rows, p.cols) = gy;
        if (need(ia)) acc(ia, d);
        break;
      }
      case Op::transpose:
        if (need(ia)) acc(ia, gy.transpose());
        break;
      case Op::reshape: {
        RowMajor rm = gy;
        if (need(ia)) acc(ia, Eigen::Map<const RowMajor>(rm.data(), x->rows(), x->cols()));
        break;
      }
      case Op::quad_form: {
        const double s = gy(0, 0);
        if (need(ia)) acc(ia, s * ((*x2) + x2->transpose()) * (*x));
        if (need(ib)) acc(ib, s * (*x) * x->transpose());
        break;
      }
      case Op::cholesky: {
        // Symmetric input: gA = 1/2 (S + S^T), S = L^-T Phi(L^T gL) L^-1.
        Tensor gl = gy.triangularView<Eigen::Lower>();
        Tensor phi = (y.transpose() * gl).triangularView<Eigen::Lower>();
        phi.diagonal() *= 0.5;
        Tensor s = lower_transpose_solve(y, phi);                    // L^-T phi
        s = lower_transpose_solve(y, s.transpose()).transpose();     // ... L^-1
        if (need(ia)) acc(ia, 0.5 * (s + s.transpose()));
        break;
      }
      case Op::solve_lower: {
        const Tensor gb = lower_transpose_solve(*x, gy);
        const Tensor gl = -(gb * y.transpose());
        if (need(ia)) acc(ia, gl.triangularView<Eigen::Lower>().toDenseMatrix());
        if (need(ib)) acc(ib, gb);
        break;
      }
      case Op::gather_rows: {
        Tensor d = Tensor::Zero(x->rows(), x->cols());
        for (std::size_t i = 0; i < p.index.size(); ++i) d.row(p.index[i]) += gy.row(static_cast<Index>(i));
        if (need(ia)) acc(ia, d);
        break;
      }
      case Op::diagonal: {
        Tensor d = Tensor::Zero(x->rows(), x->cols());
        d.diagonal() = gy.col(0);
        if (need(ia)) acc(ia, d);
        break;
      }
      case Op::tril_pack: {
        Tensor d(x->rows(), x->cols());
        Index k = 0;
        for (Index i = 0; i < p.rows; ++i)
          for (Index j = 0; j <= i; ++j) d.data()[k++] = gy(i, j);
        if (need(ia)) acc(ia, d);
        break;
      }
    }
  }
  return Gradients(std::move(g));
}

// ---- builders --------------------------------------------------------------

namespace {
Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("graph: invalid Var");
  return *a.tape();
}
}  // namespace

Var matmul(Var a, Var b) { return tape_of(a).record(Op::matmul, {a, b}); }
Var operator+(Var a, Var b) { return tape_of(a).record(Op::add, {a, b}); }
Var operator-(Var a, Var b) { return tape_of(a).record(Op::subtract, {a, b}); }
Var operator-(Var a) { return (-1.0) * a; }
Var operator*(double s, Var a) {
  OpParams p;
  p.a = s;
  return tape_of(a).record(Op::scale, {a}, p);
}
Var operator+(Var a, double c) {
  OpParams p;
  p.a = c;
  return tape_of(a).record(Op::shift, {a}, p);
}
Var cwise_mul(Var a, Var b) { return tape_of(a).record(Op::cwise_mul, {a, b}); }
Var tanh(Var a) { return tape_of(a).record(Op::tanh, {a}); }
Var relu(Var a) { return tape_of(a).record(Op::relu, {a}); }
Var sigmoid(Var a) { return tape_of(a).record(Op::sigmoid, {a}); }
Var softplus(Var a) { return tape_of(a).record(Op::softplus, {a}); }
Var exp(Var a) { return tape_of(a).record(Op::exp, {a}); }
Var log(Var a) { return tape_of(a).record(Op::log, {a}); }
Var square(Var a) { return tape_of(a).record(Op::square, {a}); }
Var sqrt(Var a) { return tape_of(a).record(Op::sqrt, {a}); }
Var clamp(Var a, double lo, double hi) {
  OpParams p;
  p.a = lo;
  p.b = hi;
  return tape_of(a).record(Op::clamp, {a}, p);
}
Var softmax_rows(Var a) { return tape_of(a).record(Op::softmax_rows, {a}); }
Var logsumexp(Var a) { return tape_of(a).record(Op::logsumexp, {a}); }
Var sum(Var a) { return tape_of(a).record(Op::sum, {a}); }
Var mean(Var a) { return tape_of(a).record(Op::mean, {a}); }
Var hcat(Var a, Var b) { return tape_of(a).record(Op::concat_cols, {a, b}); }
Var vcat(Var a, Var b) { return tape_of(a).record(Op::concat_rows, {a, b}); }
Var block(Var a, Index r0, Index c0, Index rows, Index cols) {
  OpParams p;
  p.r0 = r0;
  p.c0 = c0;
  p.rows = rows;
  p.cols = cols;
  return tape_of(a).record(Op::slice, {a}, p);
}
Var transpose(Var a) { return tape_of(a).record(Op::transpose, {a}); }
Var reshape(Var a, Index rows, Index cols) {
  OpParams p;
  p.rows = rows;
  p.cols = cols;
  return tape_of(a).record(Op::reshape, {a}, p);
}
Var quad_form(Var x, Var A) { return tape_of(x).record(Op::quad_form, {x, A}); }
Var cholesky(Var A) { return tape_of(A).record(Op::cholesky, {A}); }
Var solve_lower(Var L, Var B) { return tape_of(L).record(Op::solve_lower, {L, B}); }
Var gather_rows(Var a, std::vector<Index> rows) {
  OpParams p;
  p.index = std::move(rows);
  return tape_of(a).record(Op::gather_rows, {a}, p);
}
Var diagonal(Var a) { return tape_of(a).record(Op::diagonal, {a}); }
Var tril_pack(Var v, Index n) {
  OpParams p;
  p.rows = n;
  p.cols = n;
  return tape_of(v).record(Op::tril_pack, {v}, p);
}

Var row_sum(Var a) { return matmul(a, tape_of(a).constant(Tensor::Ones(a.cols(), 1))); }

Var repeat_rows(Var row, Index n_rows) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expected a row, got " + shape(row.value()));
  if (n_rows == 1) return row;
  return matmul(tape_of(row).constant(Tensor::Ones(n_rows, 1)), row);
}

Tensor gradient(const ScalarFn& f, const Tensor& point) {
  Tape tape;
  Var x = tape.variable(point);
  Var y = f(tape, x);
  return tape.backward(y)[x];
}

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  const Tensor analytic = gradient(f, point);
  auto eval = [&](const Tensor& p) {
    Tape tape;
    return f(tape, tape.constant(p)).scalar();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    const double x0 = probe.data()[i];
    probe.data()[i] = x0 + eps;
    const double up = eval(probe);
    probe.data()[i] = x0 - eps;
    const double down = eval(probe);
    probe.data()[i] = x0;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic.data()[i] - numeric) / (std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace apiae::graph
