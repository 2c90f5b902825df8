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

#include "apiae/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "apiae/adapt.hpp"
#include "apiae/errors.hpp"

namespace apiae {

using graph::Tape;
using graph::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

Var leaf(Tape& tape, const Matrix& m, bool requires_grad) {
  return requires_grad ? tape.variable(m) : tape.constant(m);
}

// sum_i alpha_i * Y_i, with Y holding M column blocks of width d.
Var mix(Tape& tape, Index components, Index d, Var alpha, Var Y) {
  if (components == 1) return Y;
  Matrix expand = Matrix::Zero(components, components * d);
  Matrix collapse = Matrix::Zero(components * d, d);
  for (Index i = 0; i < components; ++i) {
    expand.block(i, i * d, 1, d).setOnes();
    collapse.block(i * d, 0, d, d).setIdentity();
  }
  Var weighted = graph::cwise_mul(graph::matmul(alpha, tape.constant(expand)), Y);
  return graph::matmul(weighted, tape.constant(collapse));
}

Var drift_with(Tape& tape, const DynamicsVars& dyn, Var alpha, Var Z) {
  Var linear = mix(tape, dyn.components, dyn.d_z, alpha, graph::matmul(Z, dyn.a));
  return linear + graph::matmul(alpha, dyn.c);
}

Var diffusion_with(Tape& tape, const DynamicsVars& dyn, Var alpha, Var V) {
  return mix(tape, dyn.components, dyn.d_z, alpha, graph::matmul(V, dyn.b));
}

DynamicsVars lift_dynamics(Tape& tape, const LocallyLinearDynamics& dyn, bool g) {
  DynamicsVars v;
  v.d_z = dyn.d_z;
  v.d_u = dyn.d_u;
  v.components = dyn.components;
  v.a = leaf(tape, dyn.a, g);
  v.b = leaf(tape, dyn.b, g);
  v.c = leaf(tape, dyn.c, g);
  v.mix_w = leaf(tape, dyn.mix_w, g);
  v.mix_b = leaf(tape, dyn.mix_b, g);
  return v;
}

DecoderVars lift_decoder(Tape& tape, const GaussianDecoder& dec, bool g) {
  DecoderVars v;
  v.d_z = dec.d_z;
  v.d_x = dec.d_x;
  v.hidden = dec.hidden;
  if (dec.hidden > 0) {
    v.w1 = leaf(tape, dec.w1, g);
    v.b1 = leaf(tape, dec.b1, g);
  }
  v.w2 = leaf(tape, dec.w2, g);
  v.b2 = leaf(tape, dec.b2, g);
  return v;
}

Var column_of(Tape& tape, const Vector& z) { return tape.constant(z.transpose()); }

}  // namespace

// ---- parameter structs -----------------------------------------------------

LocallyLinearDynamics LocallyLinearDynamics::zeros(Index d_z, Index d_u, Index components) {
  if (d_z < 1 || d_u < 1 || components < 1) throw std::invalid_argument("dynamics: dimensions must be positive");
  LocallyLinearDynamics dyn;
  dyn.d_z = d_z;
  dyn.d_u = d_u;
  dyn.components = components;
  dyn.a = Matrix::Zero(d_z, components * d_z);
  dyn.b = Matrix::Zero(d_u, components * d_z);
  dyn.c = Matrix::Zero(components, d_z);
  dyn.mix_w = Matrix::Zero(d_z, components);
  dyn.mix_b = Matrix::Zero(1, components);
  return dyn;
}

LocallyLinearDynamics LocallyLinearDynamics::stable_init(Index d_z, Index d_u, Index components, double noise,
                                                         Rng& rng) {
  auto dyn = zeros(d_z, d_u, components);
  for (Index i = 0; i < components; ++i) {
    const Matrix A = -0.1 * Matrix::Identity(d_z, d_z) + noise * standard_normal(rng, d_z, d_z);
    const Matrix B = 0.1 * Matrix::Identity(d_z, d_u) + noise * standard_normal(rng, d_z, d_u);
    dyn.set_component(i, A, B, RowVector::Zero(d_z));
  }
  dyn.mix_w = standard_normal(rng, d_z, components);
  return dyn;
}

Matrix LocallyLinearDynamics::component_a(Index i) const { return a.block(0, i * d_z, d_z, d_z).transpose(); }
Matrix LocallyLinearDynamics::component_b(Index i) const { return b.block(0, i * d_z, d_u, d_z).transpose(); }
RowVector LocallyLinearDynamics::component_c(Index i) const { return c.row(i); }

void LocallyLinearDynamics::set_component(Index i, const Matrix& A, const Matrix& B, const RowVector& c_i) {
  if (A.rows() != d_z || A.cols() != d_z || B.rows() != d_z || B.cols() != d_u || c_i.size() != d_z)
    throw std::invalid_argument("set_component: shape mismatch");
  a.block(0, i * d_z, d_z, d_z) = A.transpose();
  b.block(0, i * d_z, d_u, d_z) = B.transpose();
  c.row(i) = c_i;
}

GaussianDecoder GaussianDecoder::init(Index d_z, Index hidden, Index d_x, Rng& rng) {
  GaussianDecoder dec;
  dec.d_z = d_z;
  dec.d_x = d_x;
  dec.hidden = hidden;
  const Index in = hidden > 0 ? hidden : d_z;
  if (hidden > 0) {
    dec.w1 = std::sqrt(2.0 / static_cast<double>(d_z)) * standard_normal(rng, d_z, hidden);
    dec.b1 = Matrix::Zero(1, hidden);
  }
  dec.w2 = std::sqrt(1.0 / static_cast<double>(in)) * standard_normal(rng, in, 2 * d_x);
  dec.w2.rightCols(d_x) *= 0.1;
  dec.b2 = Matrix::Zero(1, 2 * d_x);
  return dec;
}

InitialPrior InitialPrior::standard(Index d_z) { return {RowVector::Zero(d_z), RowVector::Zero(d_z)}; }

ModelVars lift(Tape& tape, const Model& model, bool requires_grad) {
  ModelVars v;
  v.d_z = model.d_z;
  v.d_u = model.d_u;
  v.d_x = model.d_x;
  v.dt = model.dt;
  v.prior = model.prior;
  v.dynamics = lift_dynamics(tape, model.dynamics, requires_grad);
  v.decoder = lift_decoder(tape, model.decoder, requires_grad);
  v.params = {v.dynamics.a, v.dynamics.b, v.dynamics.c, v.dynamics.mix_w, v.dynamics.mix_b};
  if (model.decoder.hidden > 0) {
    v.params.push_back(v.decoder.w1);
    v.params.push_back(v.decoder.b1);
  }
  v.params.push_back(v.decoder.w2);
  v.params.push_back(v.decoder.b2);
  return v;
}

// ---- tape-level maps ---------------------------------------------------------

Var mixture_weights(const DynamicsVars& dyn, Var Z) {
  Var logits = graph::matmul(Z, dyn.mix_w) + graph::repeat_rows(dyn.mix_b, Z.rows());
  return graph::softmax_rows(logits);
}

Var drift(const DynamicsVars& dyn, Var Z) {
  return drift_with(*Z.tape(), dyn, mixture_weights(dyn, Z), Z);
}

Var apply_diffusion(const DynamicsVars& dyn, Var Z, Var V) {
  return diffusion_with(*Z.tape(), dyn, mixture_weights(dyn, Z), V);
}

DecoderOutput decode(const DecoderVars& dec, Var Z) {
  const Index L = Z.rows();
  Var features = Z;
  if (dec.hidden > 0) features = graph::relu(graph::matmul(Z, dec.w1) + graph::repeat_rows(dec.b1, L));
  Var out = graph::matmul(features, dec.w2) + graph::repeat_rows(dec.b2, L);
  DecoderOutput o;
  o.mean = graph::block(out, 0, 0, L, dec.d_x);
  o.log_std = graph::clamp(graph::block(out, 0, dec.d_x, L, dec.d_x), GaussianDecoder::kLogStdMin,
                           GaussianDecoder::kLogStdMax);
  return o;
}

Var obs_loglik(const DecoderVars& dec, const RowVector& x, Var Z) {
  Tape& tape = *Z.tape();
  if (x.size() != dec.d_x) throw std::invalid_argument("obs_loglik: observation has wrong dimension");
  const Index L = Z.rows();
  const DecoderOutput o = decode(dec, Z);
  Var diff = tape.constant(x.replicate(L, 1)) - o.mean;
  Var scaled = graph::cwise_mul(graph::square(diff), graph::exp(-2.0 * o.log_std));
  Var per_coord = (scaled + 2.0 * o.log_std) + kLog2Pi;
  return -0.5 * graph::row_sum(per_coord);
}

Var init_logratio(const InitialPrior& prior, const GaussianVars& q0, Var Z0) {
  Tape& tape = *Z0.tape();
  const Index L = Z0.rows();
  const Index d = Z0.cols();
  const double half_d_log2pi = 0.5 * static_cast<double>(d) * kLog2Pi;

  // -log p0(z) = 0.5 |(z - m)/s|^2 + sum log s + d/2 log 2 pi
  const RowVector inv_var = (-2.0 * prior.log_std.array()).exp().matrix();
  Var centered_p = Z0 - tape.constant(prior.mean.replicate(L, 1));
  Var neg_log_p0 = (0.5 * graph::row_sum(graph::cwise_mul(graph::square(centered_p),
                                                          tape.constant(inv_var.replicate(L, 1))))) +
                   (prior.log_std.sum() + half_d_log2pi);

  // log q0(z) = -0.5 |L^-1 (z - mu)|^2 - sum log diag L - d/2 log 2 pi
  Var centered_q = Z0 - graph::repeat_rows(q0.mean, L);
  Var white = graph::transpose(graph::solve_lower(q0.chol, graph::transpose(centered_q)));
  Var log_det = graph::sum(graph::log(graph::diagonal(q0.chol)));
  Var log_q0 = (-0.5 * graph::row_sum(graph::square(white)) - graph::repeat_rows(log_det, L)) + (-half_d_log2pi);
  return neg_log_p0 + log_q0;
}

// ---- value-level wrappers ----------------------------------------------------

Vector mixture_weights(const LocallyLinearDynamics& dyn, const Vector& z) {
  Tape tape;
  auto v = lift_dynamics(tape, dyn, false);
  return mixture_weights(v, column_of(tape, z)).value().row(0).transpose();
}

Vector drift(const LocallyLinearDynamics& dyn, const Vector& z) {
  Tape tape;
  auto v = lift_dynamics(tape, dyn, false);
  return drift(v, column_of(tape, z)).value().row(0).transpose();
}

Matrix diffusion(const LocallyLinearDynamics& dyn, const Vector& z) {
  Tape tape;
  auto v = lift_dynamics(tape, dyn, false);
  Var Z = tape.constant(z.transpose().replicate(dyn.d_u, 1));
  // Row j applies sigma(z) to e_j, i.e. column j of sigma(z).
  Var cols = apply_diffusion(v, Z, tape.constant(Matrix::Identity(dyn.d_u, dyn.d_u)));
  return cols.value().transpose();
}

double obs_loglik(const GaussianDecoder& dec, const Vector& x, const Vector& z) {
  Tape tape;
  auto v = lift_decoder(tape, dec, false);
  return obs_loglik(v, x.transpose(), column_of(tape, z)).scalar();
}

Vector decoder_mean(const GaussianDecoder& dec, const Vector& z) {
  return decoder_mean(dec, Matrix(z.transpose())).row(0).transpose();
}

Matrix decoder_mean(const GaussianDecoder& dec, const Matrix& Z) {
  Tape tape;
  auto v = lift_decoder(tape, dec, false);
  return decode(v, tape.constant(Z)).mean.value();
}

double init_logratio(const InitialPrior& prior, const RowVector& q0_mean, const Matrix& q0_chol,
                     const RowVector& z0) {
  if (q0_chol.rows() != q0_chol.cols() || q0_chol.rows() != q0_mean.size() || z0.size() != q0_mean.size())
    throw std::invalid_argument("init_logratio: shape mismatch");
  if ((q0_chol.diagonal().array() <= 0.0).any())
    throw NumericalError("init_logratio: Cholesky factor must have a positive diagonal");
  Tape tape;
  GaussianVars q0{tape.constant(q0_mean), tape.constant(q0_chol)};
  return init_logratio(prior, q0, tape.constant(z0)).scalar();
}

// ---- rollout -------------------------------------------------------------------

StateCost StateCost::learning(Matrix observations) {
  StateCost c;
  c.mode = Mode::learning;
  c.observations = std::move(observations);
  return c;
}

StateCost StateCost::planning(std::vector<std::optional<TargetCost>> costs, double temperature) {
  StateCost c;
  c.mode = Mode::planning;
  c.costs = std::move(costs);
  c.temperature = temperature;
  return c;
}

Index StateCost::horizon() const {
  return mode == Mode::learning ? observations.rows() : static_cast<Index>(costs.size());
}

RolloutNoise draw_noise(Rng& rng, Index L, Index K, Index d_z, Index d_u, double dt) {
  RolloutNoise n;
  n.eps0 = standard_normal(rng, L, d_z);
  const double scale = std::sqrt(dt);
  n.dw.reserve(static_cast<std::size_t>(K - 1));
  for (Index k = 0; k + 1 < K; ++k) n.dw.push_back(scale * standard_normal(rng, L, d_u));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (Index k = 0; k + 1 < K; ++k) n.resample_uniform.push_back(uni(rng));
  return n;
}

Trajectories simulate(Tape& tape, const ModelVars& model, const GaussianVars& q0, const ScheduleVars& schedule,
                      const StateCost& cost, const RolloutNoise& noise, const SimulateOptions& options) {
  const Index L = noise.eps0.rows();
  const Index K = schedule.steps() + 1;
  const double dt = model.dt;
  if (L < 1) throw std::invalid_argument("simulate: need at least one path");
  if (static_cast<Index>(noise.dw.size()) != K - 1)
    throw std::invalid_argument("simulate: noise has " + std::to_string(noise.dw.size()) + " steps, schedule has " +
                                std::to_string(K - 1));
  if (cost.horizon() != K)
    throw std::invalid_argument("simulate: state cost covers " + std::to_string(cost.horizon()) +
                                " states, schedule implies " + std::to_string(K));
  if (noise.eps0.cols() != model.d_z) throw std::invalid_argument("simulate: eps0 has wrong dimension");
  const bool learning = cost.mode == StateCost::Mode::learning;

  Trajectories traj;
  Var S;
  Var V;
  try {
    Var Z0 = graph::repeat_rows(q0.mean, L) + graph::matmul(tape.constant(noise.eps0), graph::transpose(q0.chol));
    traj.z.push_back(Z0);
    if (learning) {
      Var first = -obs_loglik(model.decoder, cost.observations.row(0), Z0);
      if (cost.offset != 0.0) first = first + cost.offset;
      V = first;
      S = init_logratio(model.prior, q0, Z0) + first;
    } else {
      V = tape.constant(Matrix::Constant(L, 1, cost.offset));
      S = V;
    }
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("rollout: non-finite value at step 0: ") + e.what());
  }

  const auto& dyn = model.dynamics;
  for (Index j = 0; j + 1 < K; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    if (noise.dw[ju].rows() != L || noise.dw[ju].cols() != model.d_u)
      throw std::invalid_argument("simulate: dw has wrong shape at step " + std::to_string(j));
    try {
      Var Z = traj.z.back();
      Var U = graph::repeat_rows(schedule.feedforward[ju], L);
      if (schedule.feedback) {
        Var centered = Z - tape.constant(schedule.mu_ref[ju].replicate(L, 1));
        const Matrix whiten_t = lower_inverse(schedule.sigma_ref_chol[ju]).transpose();
        U = U + graph::matmul(graph::matmul(centered, tape.constant(whiten_t)), graph::transpose(schedule.gain[ju]));
      }
      Var alpha = mixture_weights(dyn, Z);
      Var DW = tape.constant(noise.dw[ju]);
      Var f = drift_with(tape, dyn, alpha, Z);
      Var g = diffusion_with(tape, dyn, alpha, dt * U + DW);
      Var Znext = (Z + dt * f) + g;

      Var step_cost;
      if (learning) {
        step_cost = -obs_loglik(model.decoder, cost.observations.row(j + 1), Znext);
      } else if (const auto& c = cost.costs[ju + 1]; c.has_value()) {
        Var m = decode(model.decoder, Znext).mean;
        Var diff = tape.constant(c->target.replicate(L, 1)) - m;
        step_cost = (cost.temperature * c->weight) * graph::row_sum(graph::square(diff));
      }
      Var control = (0.5 * dt) * graph::row_sum(graph::square(U)) + graph::row_sum(graph::cwise_mul(U, DW));
      S = S + control;
      if (step_cost.valid()) {
        S = S + step_cost;
        V = V + step_cost;
      }
      traj.z.push_back(Znext);
      traj.u.push_back(U);
      traj.dw.push_back(noise.dw[ju]);
      traj.resampled.emplace_back();

      if (options.resample) {
        const auto w = weights(S.value().col(0));
        if (ess(w.normalized) < options.ess_threshold * static_cast<double>(L)) {
          auto idx = systematic_resample(w.normalized, noise.resample_uniform[ju]);
          for (auto& zk : traj.z) zk = graph::gather_rows(zk, idx);
          for (auto& uk : traj.u) uk = graph::gather_rows(uk, idx);
          for (auto& dk : traj.dw) {
            Matrix copy(L, dk.cols());
            for (Index l = 0; l < L; ++l) copy.row(l) = dk.row(idx[static_cast<std::size_t>(l)]);
            dk = std::move(copy);
          }
          // Each survivor carries the running log normalizer.
          Var lme = graph::logsumexp(-S) + (-std::log(static_cast<double>(L)));
          S = graph::repeat_rows(-lme, L);
          V = graph::gather_rows(V, idx);
          traj.resampled.back() = std::move(idx);
        }
      }
    } catch (const NumericalError& e) {
      throw NumericalError("rollout: non-finite value at step " + std::to_string(j + 1) + ": " + e.what());
    }
  }
  traj.action = S;
  traj.state_cost = V;
  return traj;
}

LatentPath rollout(const Model& model, const GaussianDist& q0, const ControlSchedule& schedule, const StateCost& cost,
                   const RolloutNoise& noise) {
  if (noise.eps0.rows() != 1) throw std::invalid_argument("rollout: noise must describe a single path");
  Tape tape;
  auto mv = lift(tape, model, false);
  auto qv = lift(tape, q0, false);
  auto sv = lift(tape, schedule, false);
  const auto traj = simulate(tape, mv, qv, sv, cost, noise);
  LatentPath path;
  const Index K = traj.horizon();
  path.z.resize(K, model.d_z);
  path.dw.resize(K - 1, model.d_u);
  path.u.resize(K - 1, model.d_u);
  for (Index k = 0; k < K; ++k) path.z.row(k) = traj.z[static_cast<std::size_t>(k)].value().row(0);
  for (Index k = 0; k + 1 < K; ++k) {
    path.dw.row(k) = traj.dw[static_cast<std::size_t>(k)].row(0);
    path.u.row(k) = traj.u[static_cast<std::size_t>(k)].value().row(0);
  }
  path.action = traj.action.value()(0, 0);
  return path;
}

}  // namespace apiae
