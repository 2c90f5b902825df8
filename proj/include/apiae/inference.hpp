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

// Structured amortized inference: a backward gated recurrent network over
// x_{1:K} that emits one control step per transition and the initial
// distribution q0 from the first hidden state.

#include <string>
#include <vector>

#include "apiae/graph.hpp"
#include "apiae/linalg.hpp"
#include "apiae/schedule.hpp"

namespace apiae {

struct InferenceNetwork {
  static constexpr double kCholFloor = 1e-4;

  Index d_x = 0;
  Index d_h = 0;
  Index d_z = 0;
  Index d_u = 0;
  // Gated recurrent cell; column blocks are [update | reset | candidate].
  Matrix cell_wx;  // d_x x 3 d_h
  Matrix cell_wh;  // d_h x 3 d_h
  Matrix cell_b;   // 1 x 3 d_h
  // Control head on (h_k, h_{k+1}) -> [u_ff (d_u) | vec K (d_u d_z, row-major)].
  Matrix ctrl_w;   // 2 d_h x (d_u + d_u d_z)
  Matrix ctrl_b;
  // Initial head on h_1 -> [mu0 (d_z) | packed lower Cholesky entries].
  Matrix init_w;   // d_h x (d_z + d_z (d_z + 1) / 2)
  Matrix init_b;

  static InferenceNetwork zeros(Index d_x, Index d_h, Index d_z, Index d_u);
  static InferenceNetwork init(Index d_x, Index d_h, Index d_z, Index d_u, Rng& rng);

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    f("cell.wx", s.cell_wx);
    f("cell.wh", s.cell_wh);
    f("cell.b", s.cell_b);
    f("ctrl.w", s.ctrl_w);
    f("ctrl.b", s.ctrl_b);
    f("init.w", s.init_w);
    f("init.b", s.init_b);
  }
};

struct NetworkVars {
  Index d_x = 0;
  Index d_h = 0;
  Index d_z = 0;
  Index d_u = 0;
  graph::Var cell_wx, cell_wh, cell_b, ctrl_w, ctrl_b, init_w, init_b;
  std::vector<graph::Var> params;  // InferenceNetwork::visit order
};

NetworkVars lift(graph::Tape& tape, const InferenceNetwork& net, bool requires_grad);

// One recurrence h_k = cell(h_{k+1}, x_k); h and x are rows.
graph::Var cell(const NetworkVars& net, graph::Var h_next, graph::Var x);

struct InferenceVars {
  GaussianVars q0;
  ScheduleVars schedule;
};

// x is K x d_x. Reference moments start at (0, I); feedback stays off.
InferenceVars infer(graph::Tape& tape, const NetworkVars& net, const Matrix& x);

struct Inference {
  GaussianDist q0;
  ControlSchedule schedule;
};

Inference infer(const InferenceNetwork& net, const Matrix& x);

}  // namespace apiae
