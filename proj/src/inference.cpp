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

#include "apiae/inference.hpp"

#include <cmath>
#include <stdexcept>

#include "apiae/errors.hpp"

namespace apiae {

using graph::Tape;
using graph::Var;

// ---- schedule ---------------------------------------------------------------

ControlSchedule ControlSchedule::zeros(Index steps, Index d_u, Index d_z) {
  ControlSchedule s;
  for (Index k = 0; k < steps; ++k) {
    s.feedforward.push_back(RowVector::Zero(d_u));
    s.gain.push_back(Matrix::Zero(d_u, d_z));
    s.mu_ref.push_back(RowVector::Zero(d_z));
    s.sigma_ref_chol.push_back(Matrix::Identity(d_z, d_z));
  }
  return s;
}

RowVector eval_control(const ControlSchedule& schedule, Index step, const RowVector& z) {
  if (step < 0 || step >= schedule.steps()) throw std::out_of_range("eval_control: step out of range");
  const auto k = static_cast<std::size_t>(step);
  RowVector u = schedule.feedforward[k];
  if (schedule.feedback) {
    const Vector white =
        schedule.sigma_ref_chol[k].triangularView<Eigen::Lower>().solve((z - schedule.mu_ref[k]).transpose());
    u += (schedule.gain[k] * white).transpose();
  }
  return u;
}

ScheduleVars lift(Tape& tape, const ControlSchedule& schedule, bool requires_grad) {
  ScheduleVars v;
  for (Index k = 0; k < schedule.steps(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    v.feedforward.push_back(requires_grad ? tape.variable(schedule.feedforward[i])
                                          : tape.constant(schedule.feedforward[i]));
    v.gain.push_back(requires_grad ? tape.variable(schedule.gain[i]) : tape.constant(schedule.gain[i]));
  }
  v.mu_ref = schedule.mu_ref;
  v.sigma_ref_chol = schedule.sigma_ref_chol;
  v.feedback = schedule.feedback;
  return v;
}

ControlSchedule values(const ScheduleVars& vars) {
  ControlSchedule s;
  for (std::size_t k = 0; k < vars.feedforward.size(); ++k) {
    s.feedforward.push_back(vars.feedforward[k].value());
    s.gain.push_back(vars.gain[k].value());
  }
  s.mu_ref = vars.mu_ref;
  s.sigma_ref_chol = vars.sigma_ref_chol;
  s.feedback = vars.feedback;
  return s;
}

GaussianVars lift(Tape& tape, const GaussianDist& dist, bool requires_grad) {
  if (requires_grad) return {tape.variable(dist.mean), tape.variable(dist.chol)};
  return {tape.constant(dist.mean), tape.constant(dist.chol)};
}

GaussianDist values(const GaussianVars& vars) { return {vars.mean.value(), vars.chol.value()}; }

// ---- network ------------------------------------------------------------------

InferenceNetwork InferenceNetwork::zeros(Index d_x, Index d_h, Index d_z, Index d_u) {
  InferenceNetwork n;
  n.d_x = d_x;
  n.d_h = d_h;
  n.d_z = d_z;
  n.d_u = d_u;
  n.cell_wx = Matrix::Zero(d_x, 3 * d_h);
  n.cell_wh = Matrix::Zero(d_h, 3 * d_h);
  n.cell_b = Matrix::Zero(1, 3 * d_h);
  n.ctrl_w = Matrix::Zero(2 * d_h, d_u + d_u * d_z);
  n.ctrl_b = Matrix::Zero(1, d_u + d_u * d_z);
  n.init_w = Matrix::Zero(d_h, d_z + d_z * (d_z + 1) / 2);
  n.init_b = Matrix::Zero(1, d_z + d_z * (d_z + 1) / 2);
  return n;
}

InferenceNetwork InferenceNetwork::init(Index d_x, Index d_h, Index d_z, Index d_u, Rng& rng) {
  auto n = zeros(d_x, d_h, d_z, d_u);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto fill = [&](Matrix& m, double scale) { m = m.unaryExpr([&](double) { return scale * uni(rng); }); };
  fill(n.cell_wx, 1.0 / std::sqrt(static_cast<double>(d_x)));
  fill(n.cell_wh, 1.0 / std::sqrt(static_cast<double>(d_h)));
  fill(n.ctrl_w, 0.01);
  fill(n.init_w, 0.01);
  // Start q0 near unit scale: softplus(0.5413) + 1e-4 ~= 1.
  Index k = n.d_z;
  for (Index i = 0; i < d_z; ++i) {
    for (Index j = 0; j <= i; ++j, ++k)
      if (i == j) n.init_b(0, k) = 0.5413;
  }
  return n;
}

NetworkVars lift(Tape& tape, const InferenceNetwork& net, bool requires_grad) {
  NetworkVars v;
  v.d_x = net.d_x;
  v.d_h = net.d_h;
  v.d_z = net.d_z;
  v.d_u = net.d_u;
  auto leaf = [&](const Matrix& m) { return requires_grad ? tape.variable(m) : tape.constant(m); };
  v.cell_wx = leaf(net.cell_wx);
  v.cell_wh = leaf(net.cell_wh);
  v.cell_b = leaf(net.cell_b);
  v.ctrl_w = leaf(net.ctrl_w);
  v.ctrl_b = leaf(net.ctrl_b);
  v.init_w = leaf(net.init_w);
  v.init_b = leaf(net.init_b);
  v.params = {v.cell_wx, v.cell_wh, v.cell_b, v.ctrl_w, v.ctrl_b, v.init_w, v.init_b};
  return v;
}

namespace {

// Input projections are computed once per sequence; `gx` is x W_x + b.
Var cell_from_projection(const NetworkVars& net, Var h_next, Var gx, Var wh_gates, Var wh_cand) {
  const Index d = net.d_h;
  Var gates_x = graph::block(gx, 0, 0, 1, 2 * d);
  Var cand_x = graph::block(gx, 0, 2 * d, 1, d);
  Var gates = graph::sigmoid(gates_x + graph::matmul(h_next, wh_gates));
  Var update = graph::block(gates, 0, 0, 1, d);
  Var reset = graph::block(gates, 0, d, 1, d);
  Var cand = graph::tanh(cand_x + graph::matmul(graph::cwise_mul(reset, h_next), wh_cand));
  return cand + graph::cwise_mul(update, h_next - cand);
}

}  // namespace

Var cell(const NetworkVars& net, Var h_next, Var x) {
  const Index d = net.d_h;
  Var gx = graph::matmul(x, net.cell_wx) + net.cell_b;
  return cell_from_projection(net, h_next, gx, graph::block(net.cell_wh, 0, 0, d, 2 * d),
                              graph::block(net.cell_wh, 0, 2 * d, d, d));
}

InferenceVars infer(Tape& tape, const NetworkVars& net, const Matrix& x) {
  const Index K = x.rows();
  if (K < 2) throw std::invalid_argument("infer: need at least two observations, got " + std::to_string(K));
  if (x.cols() != net.d_x)
    throw DataError("infer: observation dimension " + std::to_string(x.cols()) + " does not match network " +
                    std::to_string(net.d_x));
  const Index d = net.d_h;
  const Index d_z = net.d_z;
  const Index d_u = net.d_u;

  Var proj = graph::matmul(tape.constant(x), net.cell_wx) + graph::repeat_rows(net.cell_b, K);
  Var wh_gates = graph::block(net.cell_wh, 0, 0, d, 2 * d);
  Var wh_cand = graph::block(net.cell_wh, 0, 2 * d, d, d);

  // hidden[k] is h_{k+1} in 1-based notation
  std::vector<Var> hidden(static_cast<std::size_t>(K));
  Var h = tape.constant(Matrix::Zero(1, d));
  for (Index k = K - 1; k >= 0; --k) {
    h = cell_from_projection(net, h, graph::block(proj, k, 0, 1, 3 * d), wh_gates, wh_cand);
    hidden[static_cast<std::size_t>(k)] = h;
  }

  InferenceVars out;
  ScheduleVars& s = out.schedule;
  for (Index k = 0; k + 1 < K; ++k) {
    Var pair = graph::hcat(hidden[static_cast<std::size_t>(k)], hidden[static_cast<std::size_t>(k + 1)]);
    Var a = graph::matmul(pair, net.ctrl_w) + net.ctrl_b;
    s.feedforward.push_back(graph::block(a, 0, 0, 1, d_u));
    s.gain.push_back(graph::reshape(graph::block(a, 0, d_u, 1, d_u * d_z), d_u, d_z));
    s.mu_ref.push_back(RowVector::Zero(d_z));
    s.sigma_ref_chol.push_back(Matrix::Identity(d_z, d_z));
  }
  s.feedback = false;

  const Index packed = d_z * (d_z + 1) / 2;
  Var head = graph::matmul(hidden.front(), net.init_w) + net.init_b;
  out.q0.mean = graph::block(head, 0, 0, 1, d_z);
  Var raw = graph::tril_pack(graph::block(head, 0, d_z, 1, packed), d_z);
  const Matrix diag_mask = Matrix::Identity(d_z, d_z);
  Matrix off_mask = Matrix::Zero(d_z, d_z);
  off_mask.triangularView<Eigen::StrictlyLower>().setOnes();
  out.q0.chol = graph::cwise_mul(raw, tape.constant(off_mask)) +
                graph::cwise_mul(graph::softplus(raw) + InferenceNetwork::kCholFloor, tape.constant(diag_mask));
  return out;
}

Inference infer(const InferenceNetwork& net, const Matrix& x) {
  Tape tape;
  auto v = lift(tape, net, false);
  auto out = infer(tape, v, x);
  return {values(out.q0), values(out.schedule)};
}

}  // namespace apiae
