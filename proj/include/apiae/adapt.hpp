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

// Adaptive path-integral refinement of the controlled proposal: importance
// weights over simulated paths, optional systematic resampling, and the
// moment-matching updates of the feedforward controls, feedback gains and
// initial distribution, repeated R times on a single tape.

#include <functional>
#include <vector>

#include "apiae/graph.hpp"
#include "apiae/linalg.hpp"
#include "apiae/model.hpp"
#include "apiae/schedule.hpp"

namespace apiae {

struct Weights {
  Vector normalized;     // softmax(-S)
  Vector log_weights;    // log of normalized
  double log_mean_exp;   // log(1/L sum exp(-S))
};

// Throws NumericalError on non-finite S.
Weights weights(const Vector& S);

// 1 / sum w^2
double ess(const Vector& w);

// Systematic resampling with offset u in [0, 1): ancestor index per slot.
std::vector<Index> systematic_resample(const Vector& w, double u);

struct Moments {
  RowVector mean;
  Matrix chol;  // Cholesky of the weighted covariance + floor * I
};

Moments moments(const Matrix& Z, const Vector& w, double cov_floor);

/// Values of a simulated ensemble plus its weights and per-state moments.
struct Ensemble {
  std::vector<Matrix> z;    // K x (L x d_z)
  std::vector<Matrix> u;    // K-1 x (L x d_u)
  std::vector<Matrix> dw;   // K-1 x (L x d_u)
  Vector action;
  Vector state_cost;
  Vector log_weights;
  Vector weights;
  double log_mean_exp = 0.0;
  std::vector<Moments> moments;               // one per state index
  std::vector<std::vector<Index>> resampled;  // per step, empty if not resampled

  [[nodiscard]] Index size() const { return action.size(); }
  [[nodiscard]] Index horizon() const { return static_cast<Index>(z.size()); }
  [[nodiscard]] LatentPath path(Index l) const;
};

Ensemble snapshot(const Trajectories& traj, double cov_floor);

// Resamples whole paths by weight; weights become uniform and every action
// is set to -log_mean_exp so the bound is preserved.
Ensemble resample(const Ensemble& ensemble, Rng& rng, double cov_floor = 1e-6);

struct AdaptConfig {
  Index L = 8;
  Index R = 4;
  double eta = 0.5;
  bool resample = false;
  double ess_threshold = 0.5;
  bool update_gains = false;
  bool update_init = true;
  double cov_floor = 1e-6;
  // Differentiate the feedforward and initial-distribution updates through
  // the weights too. Off by default: weights are constants inside updates.
  bool weight_gradients = false;

  void validate() const;
};

// Tape-level updates. Weights and reference moments enter as constants;
// the previous controls stay differentiable.
void update_feedforward(ScheduleVars& schedule, const Ensemble& ensemble, double eta, double dt);
// Same with the weights as an L x 1 tape node.
void update_feedforward(ScheduleVars& schedule, const Ensemble& ensemble, graph::Var weights, double eta, double dt);
void update_gain(ScheduleVars& schedule, const Ensemble& ensemble, double eta, double dt);
GaussianVars update_init(const Trajectories& traj, const Vector& w, double cov_floor);
GaussianVars update_init(const Trajectories& traj, graph::Var w, double cov_floor);

// Value-level versions of the same rules.
ControlSchedule update_feedforward(const ControlSchedule& schedule, const Ensemble& ensemble, double eta, double dt);
ControlSchedule update_gain(const ControlSchedule& schedule, const Ensemble& ensemble, double eta, double dt);
GaussianDist update_init(const Ensemble& ensemble, double cov_floor);

struct RoundStats {
  double ess = 0.0;
  double log_mean_exp = 0.0;
  double weighted_state_cost = 0.0;  // sum_l w_l V_l
  int resample_events = 0;
};

struct AdaptResult {
  Trajectories paths;     // final simulation, still on the tape
  Ensemble ensemble;      // its values
  GaussianVars q0;        // refined
  ScheduleVars schedule;  // refined
  std::vector<RoundStats> rounds;  // R + 1 entries, the last is the final simulation
};

/// R rounds of {simulate, weight, update} followed by one final simulation.
/// Noise for every round is drawn from rng in a fixed order.
// Called once per simulated round (R + 1 times) with that round's values.
using RoundObserver = std::function<void(Index round, const Ensemble& ensemble)>;

AdaptResult adapt_loop(graph::Tape& tape, const ModelVars& model, GaussianVars q0, ScheduleVars schedule,
                       const StateCost& cost, const AdaptConfig& config, Rng& rng,
                       const RoundObserver& observer = {});

}  // namespace apiae
