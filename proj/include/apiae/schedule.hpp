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

// Time-discretized linear feedback policy shared by the rollout, the
// inference network and the path-integral updates.
//
// Step j (0-based, j = 0..K-2) drives z_j -> z_{j+1} with
//   u_j(z) = u_ff_j + K_j * solve(sigma_ref_chol_j, z - mu_ref_j).

#include <vector>

#include "apiae/graph.hpp"
#include "apiae/linalg.hpp"

namespace apiae {

struct ControlSchedule {
  std::vector<RowVector> feedforward;   // 1 x d_u per step
  std::vector<Matrix> gain;             // d_u x d_z per step
  std::vector<RowVector> mu_ref;        // 1 x d_z per step
  std::vector<Matrix> sigma_ref_chol;   // d_z x d_z per step
  bool feedback = false;                // gains are ignored while false

  static ControlSchedule zeros(Index steps, Index d_u, Index d_z);

  [[nodiscard]] Index steps() const { return static_cast<Index>(feedforward.size()); }
};

RowVector eval_control(const ControlSchedule& schedule, Index step, const RowVector& z);

// Tape-resident schedule. Feedforward and gains are nodes; the reference
// moments are constants (gradients stop at the ensemble statistics).
struct ScheduleVars {
  std::vector<graph::Var> feedforward;
  std::vector<graph::Var> gain;
  std::vector<RowVector> mu_ref;
  std::vector<Matrix> sigma_ref_chol;
  bool feedback = false;

  [[nodiscard]] Index steps() const { return static_cast<Index>(feedforward.size()); }
};

ScheduleVars lift(graph::Tape& tape, const ControlSchedule& schedule, bool requires_grad);
ControlSchedule values(const ScheduleVars& vars);

// Gaussian over z0 with lower Cholesky factor.
struct GaussianDist {
  RowVector mean;
  Matrix chol;
};

struct GaussianVars {
  graph::Var mean;  // 1 x d_z
  graph::Var chol;  // d_z x d_z lower
};

GaussianVars lift(graph::Tape& tape, const GaussianDist& dist, bool requires_grad);
GaussianDist values(const GaussianVars& vars);

}  // namespace apiae
