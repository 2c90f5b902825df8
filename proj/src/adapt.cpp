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

#include "apiae/adapt.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "apiae/errors.hpp"

namespace apiae {

using graph::Tape;
using graph::Var;

Weights weights(const Vector& S) {
  if (S.size() == 0) throw std::invalid_argument("weights: empty action vector");
  if (!S.allFinite()) throw NumericalError("weights: non-finite action");
  const Vector neg = -S;
  const double m = neg.maxCoeff();
  const double total = (neg.array() - m).exp().sum();
  const double lse = m + std::log(total);
  Weights w;
  w.log_weights = (neg.array() - lse).matrix();
  w.normalized = w.log_weights.array().exp().matrix();
  w.log_mean_exp = lse - std::log(static_cast<double>(S.size()));
  return w;
}

double ess(const Vector& w) { return 1.0 / w.squaredNorm(); }

std::vector<Index> systematic_resample(const Vector& w, double u) {
  const Index L = w.size();
  std::vector<Index> idx(static_cast<std::size_t>(L));
  double cumulative = w(0);
  Index j = 0;
  for (Index i = 0; i < L; ++i) {
    const double point = (static_cast<double>(i) + u) / static_cast<double>(L);
    while (point > cumulative && j + 1 < L) cumulative += w(++j);
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

Moments moments(const Matrix& Z, const Vector& w, double cov_floor) {
  Moments m;
  m.mean = weighted_mean(Z, w);
  Matrix cov = weighted_covariance(Z, w);
  cov.diagonal().array() += cov_floor;
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("moments: covariance is not positive definite");
  m.chol = llt.matrixL();
  return m;
}

LatentPath Ensemble::path(Index l) const {
  LatentPath p;
  const Index K = horizon();
  p.z.resize(K, z.front().cols());
  for (Index k = 0; k < K; ++k) p.z.row(k) = z[static_cast<std::size_t>(k)].row(l);
  if (K > 1) {
    p.u.resize(K - 1, u.front().cols());
    p.dw.resize(K - 1, dw.front().cols());
    for (Index k = 0; k + 1 < K; ++k) {
      p.u.row(k) = u[static_cast<std::size_t>(k)].row(l);
      p.dw.row(k) = dw[static_cast<std::size_t>(k)].row(l);
    }
  }
  p.action = action(l);
  return p;
}

namespace {

void fill_statistics(Ensemble& e, double cov_floor) {
  const auto w = weights(e.action);
  e.weights = w.normalized;
  e.log_weights = w.log_weights;
  e.log_mean_exp = w.log_mean_exp;
  e.moments.clear();
  for (const auto& zk : e.z) e.moments.push_back(moments(zk, e.weights, cov_floor));
}

}  // namespace

Ensemble snapshot(const Trajectories& traj, double cov_floor) {
  Ensemble e;
  for (const auto& zk : traj.z) e.z.push_back(zk.value());
  for (const auto& uk : traj.u) e.u.push_back(uk.value());
  e.dw = traj.dw;
  e.action = traj.action.value().col(0);
  e.state_cost = traj.state_cost.value().col(0);
  e.resampled = traj.resampled;
  fill_statistics(e, cov_floor);
  return e;
}

Ensemble resample(const Ensemble& ensemble, Rng& rng, double cov_floor) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const auto idx = systematic_resample(ensemble.weights, uni(rng));
  const Index L = ensemble.size();
  auto gather = [&](const Matrix& m) {
    Matrix out(L, m.cols());
    for (Index l = 0; l < L; ++l) out.row(l) = m.row(idx[static_cast<std::size_t>(l)]);
    return out;
  };
  Ensemble out;
  for (const auto& m : ensemble.z) out.z.push_back(gather(m));
  for (const auto& m : ensemble.u) out.u.push_back(gather(m));
  for (const auto& m : ensemble.dw) out.dw.push_back(gather(m));
  out.state_cost = gather(ensemble.state_cost);
  out.action = Vector::Constant(L, -ensemble.log_mean_exp);
  out.resampled = ensemble.resampled;
  out.resampled.push_back(idx);
  fill_statistics(out, cov_floor);
  return out;
}

void AdaptConfig::validate() const {
  if (L < 2) throw std::invalid_argument("adapt: L must be at least 2");
  if (R < 0) throw std::invalid_argument("adapt: R must be non-negative");
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("adapt: eta must lie in (0, 1]");
  if (!(ess_threshold > 0.0 && ess_threshold <= 1.0))
    throw std::invalid_argument("adapt: ess_threshold must lie in (0, 1]");
  if (!(cov_floor > 0.0)) throw std::invalid_argument("adapt: cov_floor must be positive");
}

// ---- updates ------------------------------------------------------------------

void update_feedforward(ScheduleVars& schedule, const Ensemble& ensemble, double eta, double dt) {
  if (schedule.steps() == 0) return;
  Tape& tape = *schedule.feedforward.front().tape();
  update_feedforward(schedule, ensemble, tape.constant(ensemble.weights), eta, dt);
}

void update_feedforward(ScheduleVars& schedule, const Ensemble& ensemble, Var weights, double eta, double dt) {
  const Index steps = schedule.steps();
  if (ensemble.horizon() != steps + 1) throw std::invalid_argument("update_feedforward: horizon mismatch");
  for (Index j = 0; j < steps; ++j) {
    const auto k = static_cast<std::size_t>(j);
    Tape& tape = *schedule.feedforward[k].tape();
    const Moments& m = ensemble.moments[k];
    Var noise_term = (eta / dt) * graph::matmul(graph::transpose(weights), tape.constant(ensemble.dw[k]));
    Var next = schedule.feedforward[k] + noise_term;
    if (schedule.feedback) {
      const Matrix whiten_t = lower_inverse(schedule.sigma_ref_chol[k]).transpose();
      const RowVector shift = (m.mean - schedule.mu_ref[k]) * whiten_t;
      next = next + graph::matmul(tape.constant(shift), graph::transpose(schedule.gain[k]));
    }
    schedule.feedforward[k] = next;
    schedule.mu_ref[k] = m.mean;
  }
}

void update_gain(ScheduleVars& schedule, const Ensemble& ensemble, double eta, double dt) {
  const Index steps = schedule.steps();
  if (ensemble.horizon() != steps + 1) throw std::invalid_argument("update_gain: horizon mismatch");
  for (Index j = 0; j < steps; ++j) {
    const auto k = static_cast<std::size_t>(j);
    Tape& tape = *schedule.gain[k].tape();
    const Moments& m = ensemble.moments[k];
    const Matrix& Z = ensemble.z[k];
    // rows: (Sigma^-1/2 (z_l - mu))^T
    const Matrix white =
        m.chol.triangularView<Eigen::Lower>().solve((Z.rowwise() - m.mean).transpose()).transpose();
    const Matrix noise_term = (eta / dt) * (ensemble.dw[k].transpose() * ensemble.weights.asDiagonal() * white);
    const Matrix rescale = lower_inverse(schedule.sigma_ref_chol[k]) * m.chol;
    schedule.gain[k] = graph::matmul(schedule.gain[k], tape.constant(rescale)) + tape.constant(noise_term);
    schedule.sigma_ref_chol[k] = m.chol;
  }
}

GaussianVars update_init(const Trajectories& traj, const Vector& w, double cov_floor) {
  return update_init(traj, traj.z.front().tape()->constant(w), cov_floor);
}

GaussianVars update_init(const Trajectories& traj, Var w, double cov_floor) {
  Var Z0 = traj.z.front();
  Tape& tape = *Z0.tape();
  const Index L = Z0.rows();
  const Index d = Z0.cols();
  GaussianVars q0;
  q0.mean = graph::matmul(graph::transpose(w), Z0);
  Var centered = Z0 - graph::repeat_rows(q0.mean, L);
  // diag(w) centered == (w 1^T) .* centered
  Var weighted = graph::cwise_mul(graph::matmul(w, tape.constant(Matrix::Ones(1, d))), centered);
  Var cov = graph::matmul(graph::transpose(centered), weighted);
  cov = cov + tape.constant(cov_floor * Matrix::Identity(d, d));
  q0.chol = graph::cholesky(cov);
  return q0;
}

ControlSchedule update_feedforward(const ControlSchedule& schedule, const Ensemble& ensemble, double eta, double dt) {
  Tape tape;
  auto v = lift(tape, schedule, false);
  update_feedforward(v, ensemble, eta, dt);
  return values(v);
}

ControlSchedule update_gain(const ControlSchedule& schedule, const Ensemble& ensemble, double eta, double dt) {
  Tape tape;
  auto v = lift(tape, schedule, false);
  update_gain(v, ensemble, eta, dt);
  return values(v);
}

GaussianDist update_init(const Ensemble& ensemble, double cov_floor) {
  const Moments m = moments(ensemble.z.front(), ensemble.weights, cov_floor);
  return {m.mean, m.chol};
}

// ---- loop -----------------------------------------------------------------------

namespace {

RoundStats stats_of(const Ensemble& e) {
  RoundStats s;
  s.ess = ess(e.weights);
  s.log_mean_exp = e.log_mean_exp;
  s.weighted_state_cost = e.weights.dot(e.state_cost);
  s.resample_events =
      static_cast<int>(std::count_if(e.resampled.begin(), e.resampled.end(), [](const auto& r) { return !r.empty(); }));
  return s;
}

}  // namespace

AdaptResult adapt_loop(Tape& tape, const ModelVars& model, GaussianVars q0, ScheduleVars schedule,
                       const StateCost& cost, const AdaptConfig& config, Rng& rng,
                       const RoundObserver& observer) {
  config.validate();
  const Index K = schedule.steps() + 1;
  const SimulateOptions options{config.resample, config.ess_threshold};
  if (config.update_gains) schedule.feedback = true;

  AdaptResult result;
  for (Index r = 0; r < config.R; ++r) {
    const auto noise = draw_noise(rng, config.L, K, model.d_z, model.d_u, model.dt);
    const auto traj = simulate(tape, model, q0, schedule, cost, noise, options);
    const auto ens = snapshot(traj, config.cov_floor);
    result.rounds.push_back(stats_of(ens));
    if (observer) observer(r, ens);
    // softmax(-S) as a column
    Var w = config.weight_gradients ? graph::transpose(graph::softmax_rows(graph::transpose(-traj.action)))
                                    : tape.constant(ens.weights);
    update_feedforward(schedule, ens, w, config.eta, model.dt);
    if (config.update_gains) update_gain(schedule, ens, config.eta, model.dt);
    if (config.update_init) q0 = update_init(traj, w, config.cov_floor);
  }
  const auto noise = draw_noise(rng, config.L, K, model.d_z, model.d_u, model.dt);
  result.paths = simulate(tape, model, q0, schedule, cost, noise, options);
  result.ensemble = snapshot(result.paths, config.cov_floor);
  result.rounds.push_back(stats_of(result.ensemble));
  if (observer) observer(config.R, result.ensemble);
  result.q0 = q0;
  result.schedule = std::move(schedule);
  return result;
}

}  // namespace apiae
