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

#pragma once

// Reverse-mode differentiation over dense float64 matrices.
//
// A Tape records every operation of a forward pass in topological order.
// Var is a light handle (tape pointer + node id); the free functions below
// build new nodes and compose like ordinary Eigen expressions:
//
//   graph::Tape tape;
//   auto x = tape.variable(x0);
//   auto y = graph::sum(graph::tanh(graph::matmul(W, x)));
//   auto grads = tape.backward(y);
//
// Vectors are matrices with one row or column. Scalars are 1x1.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace apiae::graph {

using Tensor = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  subtract,
  cwise_mul,
  scale,
  shift,
  tanh,
  relu,
  sigmoid,
  softplus,
  exp,
  log,
  square,
  sqrt,
  clamp,
  softmax_rows,
  logsumexp,
  sum,
  mean,
  concat_cols,
  concat_rows,
  slice,
  transpose,
  reshape,
  quad_form,
  cholesky,
  solve_lower,
  gather_rows,
  diagonal,
  tril_pack,
};

std::string_view op_name(Op op);

// Extra, non-tensor arguments of an op (scale factor, block origin, ...).
struct OpParams {
  double a = 0.0;
  double b = 0.0;
  Index r0 = 0;
  Index c0 = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> index;
};

struct Node {
  Op op = Op::leaf;
  std::array<int, 2> inputs{-1, -1};
  Tensor value;
  bool requires_grad = false;
  OpParams params;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] bool valid() const { return tape_ != nullptr && id_ >= 0; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  // Gradient of the root w.r.t. v; zeros of v's shape when v does not
  // influence the root.
  [[nodiscard]] Tensor operator[](Var v) const;
  [[nodiscard]] bool touched(Var v) const;

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Appends a node computed by op's forward rule. Throws
  // std::invalid_argument on shape mismatch and NumericalError when the
  // result is not finite.
  Var record(Op op, std::initializer_list<Var> inputs, OpParams params = {});

  // Reverse sweep from a 1x1 root. Values on the tape are not modified.
  [[nodiscard]] Gradients backward(Var root) const;

  [[nodiscard]] const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Node node);
  std::vector<Node> nodes_;
};

// ---- expression builders ---------------------------------------------------

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator+(Var a, double c);
Var cwise_mul(Var a, Var b);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var clamp(Var a, double lo, double hi);
Var softmax_rows(Var a);
Var logsumexp(Var a);
Var sum(Var a);
Var mean(Var a);
Var hcat(Var a, Var b);
Var vcat(Var a, Var b);
Var block(Var a, Index r0, Index c0, Index rows, Index cols);
Var transpose(Var a);
Var reshape(Var a, Index rows, Index cols);
Var quad_form(Var x, Var A);
Var cholesky(Var A);
Var solve_lower(Var L, Var B);
Var gather_rows(Var a, std::vector<Index> rows);
Var diagonal(Var a);
Var tril_pack(Var v, Index n);

// Row sums as a column, via a ones matmul.
Var row_sum(Var a);
// Repeats a 1xn row n_rows times.
Var repeat_rows(Var row, Index n_rows);

// Max over coordinates of |analytic - central difference| /
// (|central difference| + 1e-12) for a scalar function of one tensor.
using ScalarFn = std::function<Var(Tape&, Var)>;
double grad_check(const ScalarFn& f, const Tensor& point, double eps);

// Analytic gradient of f at point, for callers that want the raw values.
Tensor gradient(const ScalarFn& f, const Tensor& point);

}  // namespace apiae::graph
