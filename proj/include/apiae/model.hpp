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

// Generative model: locally-linear latent SDE, Gaussian decoder, fixed
// standard-normal prior over z0, and the controlled Euler-Maruyama rollout
// that accumulates the Girsanov action S_u.

#include <optional>
#include <string>
#include <vector>

#include "apiae/graph.hpp"
#include "apiae/linalg.hpp"
#include "apiae/schedule.hpp"

namespace apiae {

/// Softmax mixture of M linear systems:
///   f(z) = sum_i alpha_i(z) (A_i z + c_i),  sigma(z) = sum_i alpha_i(z) B_i,
///   alpha(z) = softmax(z mix_w + mix_b).
/// Components are stored stacked so a batch of L states is a handful of
/// matmuls: block i of `a` (columns i*d_z .. i*d_z+d_z) holds A_i^T, block i
/// of `b` holds B_i^T, row i of `c` holds c_i^T.
struct LocallyLinearDynamics {
  Index d_z = 0;
  Index d_u = 0;
  Index components = 0;
  Matrix a;      // d_z x (M d_z)
  Matrix b;      // d_u x (M d_z)
  Matrix c;      // M x d_z
  Matrix mix_w;  // d_z x M
  Matrix mix_b;  // 1 x M

  static LocallyLinearDynamics zeros(Index d_z, Index d_u, Index components);
  // A_i = -0.1 I, B_i = 0.1 I, c_i = 0, each plus N(0, noise^2) entries.
  static LocallyLinearDynamics stable_init(Index d_z, Index d_u, Index components, double noise, Rng& rng);

  [[nodiscard]] Matrix component_a(Index i) const;
  [[nodiscard]] Matrix component_b(Index i) const;
  [[nodiscard]] RowVector component_c(Index i) const;
  void set_component(Index i, const Matrix& A, const Matrix& B, const RowVector& c_i);

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    f("a", s.a);
    f("b", s.b);
    f("c", s.c);
    f("mix_w", s.mix_w);
    f("mix_b", s.mix_b);
  }
};

/// p(x|z) = N(mean(z), diag(exp(2 s(z)))) with s clamped to [-5, 3].
/// hidden > 0: relu MLP d_z -> hidden -> 2 d_x. hidden == 0: affine
/// d_z -> 2 d_x (used by the linear-Gaussian oracle).
struct GaussianDecoder {
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 3.0;

  Index d_z = 0;
  Index d_x = 0;
  Index hidden = 0;
  Matrix w1;  // d_z x hidden
  Matrix b1;  // 1 x hidden
  Matrix w2;  // (hidden or d_z) x 2 d_x, columns [mean | log-std]
  Matrix b2;  // 1 x 2 d_x

  static GaussianDecoder init(Index d_z, Index hidden, Index d_x, Rng& rng);

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    if (s.hidden > 0) {
      f("w1", s.w1);
      f("b1", s.b1);
    }
    f("w2", s.w2);
    f("b2", s.b2);
  }
};

/// p0 = N(mean, diag(exp(log_std))^2), fixed to N(0, I) by default.
struct InitialPrior {
  RowVector mean;
  RowVector log_std;

  static InitialPrior standard(Index d_z);
};

struct Model {
  Index d_z = 0;
  Index d_u = 0;
  Index d_x = 0;
  Index K = 0;
  double dt = 0.1;
  LocallyLinearDynamics dynamics;
  GaussianDecoder decoder;
  InitialPrior prior;

  // Every learnable tensor with a stable name, in a fixed order.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    s.dynamics.visit([&](const std::string& n, auto& m) { f("dyn." + n, m); });
    s.decoder.visit([&](const std::string& n, auto& m) { f("dec." + n, m); });
  }
};

// ---- tape-level views ------------------------------------------------------

struct DynamicsVars {
  Index d_z = 0;
  Index d_u = 0;
  Index components = 0;
  graph::Var a, b, c, mix_w, mix_b;
};

struct DecoderVars {
  Index d_z = 0;
  Index d_x = 0;
  Index hidden = 0;
  graph::Var w1, b1, w2, b2;
};

struct ModelVars {
  Index d_z = 0;
  Index d_u = 0;
  Index d_x = 0;
  double dt = 0.1;
  DynamicsVars dynamics;
  DecoderVars decoder;
  InitialPrior prior;
  std::vector<graph::Var> params;  // Model::visit order
};

ModelVars lift(graph::Tape& tape, const Model& model, bool requires_grad);

// Rows of Z are L states; every function below maps the batch at once.
graph::Var mixture_weights(const DynamicsVars& dyn, graph::Var Z);            // L x M
graph::Var drift(const DynamicsVars& dyn, graph::Var Z);                      // L x d_z
graph::Var apply_diffusion(const DynamicsVars& dyn, graph::Var Z, graph::Var V);  // rows sigma(z_l) v_l

struct DecoderOutput {
  graph::Var mean;     // L x d_x
  graph::Var log_std;  // L x d_x, clamped
};
DecoderOutput decode(const DecoderVars& dec, graph::Var Z);

// log N(x; decoder(z_l)) for each row; x is a 1 x d_x observation.
graph::Var obs_loglik(const DecoderVars& dec, const RowVector& x, graph::Var Z);  // L x 1

// -log p0(z_l) + log q0(z_l) for each row of Z0.
graph::Var init_logratio(const InitialPrior& prior, const GaussianVars& q0, graph::Var Z0);  // L x 1

// ---- value-level operations -------------------------------------------------

Vector drift(const LocallyLinearDynamics& dyn, const Vector& z);
Matrix diffusion(const LocallyLinearDynamics& dyn, const Vector& z);  // d_z x d_u
Vector mixture_weights(const LocallyLinearDynamics& dyn, const Vector& z);
double obs_loglik(const GaussianDecoder& dec, const Vector& x, const Vector& z);
Vector decoder_mean(const GaussianDecoder& dec, const Vector& z);
Matrix decoder_mean(const GaussianDecoder& dec, const Matrix& Z);  // row-wise
double init_logratio(const InitialPrior& prior, const RowVector& q0_mean, const Matrix& q0_chol,
                     const RowVector& z0);

// ---- state cost and rollout -------------------------------------------------

/// Planning cost weight * ||target - decoder_mean(z)||^2 on one state.
struct TargetCost {
  RowVector target;
  double weight = 1.0;
};

struct StateCost {
  enum class Mode { learning, planning };
  Mode mode = Mode::learning;
  Matrix observations;                            // learning: K x d_x
  std::vector<std::optional<TargetCost>> costs;   // planning: entry k applies to z_k (k >= 1)
  double temperature = 1.0;
  double offset = 0.0;                            // constant added to V of every path

  static StateCost learning(Matrix observations);
  static StateCost planning(std::vector<std::optional<TargetCost>> costs, double temperature = 1.0);

  [[nodiscard]] Index horizon() const;
};

/// Pre-drawn randomness for one simulation of L paths.
struct RolloutNoise {
  Matrix eps0;                           // L x d_z, standard normal
  std::vector<Matrix> dw;                // K-1 entries of L x d_u, N(0, dt I)
  std::vector<double> resample_uniform;  // K-1 uniforms in [0, 1)
};

RolloutNoise draw_noise(Rng& rng, Index L, Index K, Index d_z, Index d_u, double dt);

struct SimulateOptions {
  bool resample = false;
  double ess_threshold = 0.5;  // fraction of L
};

/// L paths living on a tape.
struct Trajectories {
  std::vector<graph::Var> z;   // K nodes, L x d_z
  std::vector<graph::Var> u;   // K-1 nodes, L x d_u
  std::vector<Matrix> dw;      // K-1 values, L x d_u (reordered by resampling)
  graph::Var action;           // L x 1
  graph::Var state_cost;       // L x 1, V terms only
  std::vector<std::vector<Index>> resampled;  // ancestor indices per step; empty when not resampled

  [[nodiscard]] Index size() const { return z.empty() ? 0 : z.front().rows(); }
  [[nodiscard]] Index horizon() const { return static_cast<Index>(z.size()); }
  [[nodiscard]] Vector action_values() const { return action.value().col(0); }
};

/// Euler-Maruyama rollout of the controlled SDE
///   z_{k+1} = z_k + f(z_k) dt + sigma(z_k)(u_k dt + dw_k),
/// accumulating S_u = V + sum(0.5 |u_k|^2 dt + u_k . dw_k).
/// Learning mode: V = init_logratio(z_0) - sum_k log p(x_{k+1} | z_k) (every
/// observation attaches to its state, no dt factor).
/// Planning mode: V = temperature * sum_k C_k(decoder_mean(z_k)), no init term.
Trajectories simulate(graph::Tape& tape, const ModelVars& model, const GaussianVars& q0,
                      const ScheduleVars& schedule, const StateCost& cost, const RolloutNoise& noise,
                      const SimulateOptions& options = {});

/// Single recorded path.
struct LatentPath {
  Matrix z;   // K x d_z
  Matrix dw;  // (K-1) x d_u
  Matrix u;   // (K-1) x d_u
  double action = 0.0;
};

/// Value-level rollout of one path (noise with L = 1).
LatentPath rollout(const Model& model, const GaussianDist& q0, const ControlSchedule& schedule, const StateCost& cost,
                   const RolloutNoise& noise);

}  // namespace apiae
