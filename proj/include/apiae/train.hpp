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

// Monte Carlo objective, training loop, bound evaluation in the four
// inference modes, and the bridge to the linear-Gaussian oracle.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apiae/adapt.hpp"
#include "apiae/graph.hpp"
#include "apiae/inference.hpp"
#include "apiae/kalman.hpp"
#include "apiae/model.hpp"

namespace apiae {

// apiae_r: refinement + resampling, apiae: refinement only,
// fivo: resampling only, iwae: neither.
enum class Mode { apiae_r, apiae, fivo, iwae };

Mode parse_mode(std::string_view name);
std::string_view mode_name(Mode mode);
bool mode_resamples(Mode mode);
bool mode_refines(Mode mode);

// Learning-mode adaptation settings for a mode; R is forced to 0 when the
// mode does not refine.
AdaptConfig adapt_config(Mode mode, Index L, Index R, double eta, double ess_threshold = 0.5,
                         double cov_floor = 1e-6);

struct ModelSpec {
  Index d_z = 2;
  Index d_u = 2;
  Index d_x = 256;
  Index components = 16;
  Index decoder_hidden = 128;
  Index rnn_hidden = 64;
  Index K = 10;
  double dt = 0.1;
  double init_noise = 0.01;
};

/// Everything that is learned: generative model and inference network.
struct Checkpoint {
  Model model;
  InferenceNetwork net;

  static Checkpoint init(const ModelSpec& spec, Rng& rng);

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    s.model.visit([&](const std::string& n, auto& m) { f("model." + n, m); });
    s.net.visit([&](const std::string& n, auto& m) { f("net." + n, m); });
  }

  [[nodiscard]] std::size_t parameter_count() const;
};

// log(1/L sum exp(-S))
double mco(const Vector& S);
graph::Var mco(graph::Var S);

/// Objective of one sequence on a tape: infer -> adapt -> mco.
struct SequenceGraph {
  ModelVars model;
  NetworkVars net;
  AdaptResult adapt;
  graph::Var bound;

  // Checkpoint::visit order.
  [[nodiscard]] std::vector<graph::Var> params() const;
};

SequenceGraph build_sequence(graph::Tape& tape, const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config,
                             Rng& rng, bool requires_grad);

// Gradient of the bound of one sequence, Checkpoint::visit order.
struct SequenceGradient {
  double bound = 0.0;
  double ess = 0.0;
  std::vector<Matrix> grads;
};

SequenceGradient sequence_gradient(const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config, Rng& rng);

struct BoundReport {
  std::vector<double> bounds;  // per sequence
  std::vector<double> ess;     // final-round ESS per sequence
  double mean_bound = 0.0;
  double ess_mean = 0.0;
  double wallclock_s = 0.0;
  std::vector<std::vector<RoundStats>> rounds;  // per sequence, per round
};

struct EvalOptions {
  double eta = 0.5;
  double ess_threshold = 0.5;
  double cov_floor = 1e-6;
  std::uint64_t seed = 1000003;
  int threads = 1;
};

BoundReport evaluate_bound(const Checkpoint& ckpt, std::span<const Matrix> data, Mode mode, Index L, Index R,
                           const EvalOptions& options = {});

struct TrainConfig {
  Mode mode = Mode::apiae;
  Index L = 8;
  Index R = 4;
  Index K = 10;
  double dt = 0.1;
  double eta = 0.5;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  int epochs = 30;
  std::uint64_t seed = 1;
  double grad_clip = 10.0;
  double ess_threshold = 0.5;
  double cov_floor = 1e-6;
  int threads = 1;

  void validate() const;
};

/// Adaptive moment estimation over a fixed list of tensors.
class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  // Descends along grads.
  void step(std::span<Matrix* const> params, std::span<const Matrix> grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double mean_bound = 0.0;
  double ess_mean = 0.0;
  double wallclock_s = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> curve;  // epoch 0 is the untrained evaluation
};

using EpochCallback = std::function<void(const EpochRecord&, const Checkpoint&)>;

TrainResult train_run(Checkpoint init, std::span<const Matrix> data, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});

// Requires one component, an affine decoder with constant log-std, and
// d_u columns of B; throws std::invalid_argument otherwise.
LinearGaussianSystem<double> linear_system(const Model& model);

}  // namespace apiae
