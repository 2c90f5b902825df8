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

#include "apiae/plan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "apiae/errors.hpp"
#include "apiae/graph.hpp"

namespace apiae {

using graph::Tape;

namespace {

Matrix weighted_decoded(const GaussianDecoder& dec, const Matrix& Z, const Vector& w) {
  return w.transpose() * decoder_mean(dec, Z);
}

}  // namespace

Reconstruction reconstruct(const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config, Rng& rng) {
  Tape tape;
  auto g = build_sequence(tape, ckpt, x, config, rng, false);
  Reconstruction out;
  out.ensemble = std::move(g.adapt.ensemble);
  const Ensemble& e = out.ensemble;
  const Index K = e.horizon();
  out.frames.resize(K, ckpt.model.d_x);
  out.latents.resize(K, ckpt.model.d_z);
  for (Index k = 0; k < K; ++k) {
    const auto& Z = e.z[static_cast<std::size_t>(k)];
    out.frames.row(k) = weighted_decoded(ckpt.model.decoder, Z, e.weights);
    out.latents.row(k) = e.weights.transpose() * Z;
  }
  return out;
}

Matrix predict(const Model& model, const Ensemble& ensemble, Index steps, Rng& rng) {
  if (steps < 0) throw std::invalid_argument("predict: negative step count");
  if (ensemble.horizon() == 0) throw std::invalid_argument("predict: empty ensemble");
  Matrix Z = ensemble.z.back();
  const Index L = Z.rows();
  const double sqrt_dt = std::sqrt(model.dt);
  Matrix frames(steps, model.d_x);
  for (Index s = 0; s < steps; ++s) {
    const Matrix eps = standard_normal(rng, L, model.d_u);
    for (Index l = 0; l < L; ++l) {
      const Vector z = Z.row(l).transpose();
      const Vector next = z + drift(model.dynamics, z) * model.dt +
                          diffusion(model.dynamics, z) * (sqrt_dt * eps.row(l).transpose());
      Z.row(l) = next.transpose();
    }
    if (!Z.allFinite()) throw NumericalError("predict: non-finite latent at step " + std::to_string(s));
    frames.row(s) = weighted_decoded(model.decoder, Z, ensemble.weights);
  }
  return frames;
}

GaussianDist encode_initial(const Checkpoint& ckpt, const Matrix& context) {
  if (context.rows() < 1) throw std::invalid_argument("encode_initial: empty context");
  if (context.cols() != ckpt.model.d_x)
    throw DataError("encode_initial: context has " + std::to_string(context.cols()) + " features, checkpoint expects " +
                    std::to_string(ckpt.model.d_x));
  const Index K = ckpt.model.K;
  Matrix x(K, context.cols());
  for (Index k = 0; k < K; ++k) x.row(k) = context.row(std::min(k, context.rows() - 1));
  return infer(ckpt.net, x).q0;
}

PlanningProblem PlanningProblem::terminal(GaussianDist z0, Index horizon, double dt, RowVector target, double weight) {
  PlanningProblem p;
  p.z0 = std::move(z0);
  p.horizon = horizon;
  p.dt = dt;
  p.costs.assign(static_cast<std::size_t>(std::max<Index>(horizon, 0)), std::nullopt);
  if (horizon > 0) p.costs.back() = TargetCost{std::move(target), weight};
  return p;
}

void PlanningProblem::validate(Index d_z, Index d_x) const {
  if (horizon < 2) throw std::invalid_argument("plan: horizon must be at least 2");
  if (static_cast<Index>(costs.size()) != horizon)
    throw std::invalid_argument("plan: need one (possibly empty) cost per state");
  if (!(dt > 0)) throw std::invalid_argument("plan: dt must be positive");
  if (z0.mean.size() != d_z || z0.chol.rows() != d_z || z0.chol.cols() != d_z)
    throw std::invalid_argument("plan: initial distribution does not match the latent dimension");
  for (const auto& c : costs)
    if (c && c->target.size() != d_x) throw DataError("plan: target image has the wrong size");
  if (!(temperature > 0)) throw std::invalid_argument("plan: temperature must be positive");
}

Plan plan(const Model& model, const PlanningProblem& problem, Rng& rng) {
  problem.validate(model.d_z, model.d_x);
  AdaptConfig config;
  config.L = problem.L;
  config.R = problem.R;
  config.eta = problem.eta;
  config.resample = false;
  config.update_gains = true;
  config.update_init = false;
  config.cov_floor = problem.cov_floor;

  Model m = model;
  m.dt = problem.dt;
  m.K = problem.horizon;

  Tape tape;
  const auto mv = lift(tape, m, false);
  const auto q0 = lift(tape, problem.z0, false);
  auto schedule = lift(tape, ControlSchedule::zeros(problem.horizon - 1, m.d_u, m.d_z), false);
  const auto cost = StateCost::planning(problem.costs, problem.temperature);

  const TargetCost* last = nullptr;
  Index last_index = 0;
  for (Index k = 0; k < problem.horizon; ++k) {
    if (problem.costs[static_cast<std::size_t>(k)]) {
      last = &*problem.costs[static_cast<std::size_t>(k)];
      last_index = k;
    }
  }

  Plan out;
  auto observer = [&](Index, const Ensemble& e) {
    PlanRound round;
    round.weighted_cost = e.weights.dot(e.state_cost);
    round.ess = ess(e.weights);
    if (last != nullptr) {
      const Matrix X = decoder_mean(m.decoder, e.z[static_cast<std::size_t>(last_index)]);
      const Vector per_path = (X.rowwise() - last->target).rowwise().squaredNorm() / static_cast<double>(m.d_x);
      round.terminal_mse = e.weights.dot(per_path);
    }
    out.trace.push_back(round);
  };
  auto result = adapt_loop(tape, mv, q0, std::move(schedule), cost, config, rng, observer);

  out.schedule = values(result.schedule);
  out.q0 = values(result.q0);
  const Ensemble& e = result.ensemble;
  out.mean_path.resize(problem.horizon, m.d_z);
  for (Index k = 0; k < problem.horizon; ++k) out.mean_path.row(k) = e.moments[static_cast<std::size_t>(k)].mean;
  out.decoded = decoder_mean(m.decoder, out.mean_path);
  return out;
}

}  // namespace apiae
