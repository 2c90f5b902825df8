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

// Reuse of a trained checkpoint: reconstruction and open-loop prediction of
// observation sequences, and latent-space planning against costs on decoded
// observations.

#include <optional>
#include <vector>

#include "apiae/adapt.hpp"
#include "apiae/model.hpp"
#include "apiae/schedule.hpp"
#include "apiae/train.hpp"

namespace apiae {

/// Posterior summary of one sequence after refinement.
struct Reconstruction {
  Matrix frames;   // K x d_x, weighted mean of decoder means over paths
  Matrix latents;  // K x d_z, weighted mean path
  Ensemble ensemble;
};

Reconstruction reconstruct(const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config, Rng& rng);

// Rolls every final-state path of `ensemble` forward `steps` steps under the
// uncontrolled prior and returns the weighted mean decoded frames.
Matrix predict(const Model& model, const Ensemble& ensemble, Index steps, Rng& rng);

// Initial distribution inferred from a context of n >= 1 frames. Shorter
// contexts are padded by repeating their last frame, longer ones truncated.
GaussianDist encode_initial(const Checkpoint& ckpt, const Matrix& context);

struct PlanningProblem {
  GaussianDist z0;
  Index horizon = 10;  // K_p states
  double dt = 0.1;
  std::vector<std::optional<TargetCost>> costs;  // horizon entries, entry k on z_k
  double temperature = 1.0;
  Index L = 64;
  Index R = 10;
  double eta = 0.9;
  double cov_floor = 1e-6;

  // || target - x_{K_p} ||^2 on the last state only.
  static PlanningProblem terminal(GaussianDist z0, Index horizon, double dt, RowVector target, double weight = 1.0);

  void validate(Index d_z, Index d_x) const;
};

struct PlanRound {
  double weighted_cost = 0.0;  // sum_l w_l V_l
  double terminal_mse = 0.0;   // weighted per-pixel MSE against the last target
  double ess = 0.0;
};

struct Plan {
  ControlSchedule schedule;
  GaussianDist q0;         // unchanged by planning
  Matrix mean_path;        // K_p x d_z
  Matrix decoded;          // K_p x d_x, decoder mean along mean_path
  std::vector<PlanRound> trace;  // R + 1 entries
};

Plan plan(const Model& model, const PlanningProblem& problem, Rng& rng);

}  // namespace apiae
