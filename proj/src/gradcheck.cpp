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

#include "apiae/gradcheck.hpp"

#include <functional>
#include <map>
#include <random>
#include <stdexcept>

#include "apiae/adapt.hpp"
#include "apiae/graph.hpp"
#include "apiae/inference.hpp"
#include "apiae/model.hpp"
#include "apiae/train.hpp"

namespace apiae {

using graph::Tape;
using graph::Var;

namespace {

Matrix uniform(Rng& rng, Index rows, Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Entries with |x| in [lo, hi] and random sign.
Matrix away_from_zero(Rng& rng, Index rows, Index cols, double lo, double hi) {
  Matrix m = uniform(rng, rows, cols, lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (Index i = 0; i < m.size(); ++i)
    if (flip(rng)) m.data()[i] = -m.data()[i];
  return m;
}

using Builder = std::function<Var(Tape&, Var)>;

// sum(W .* op(x)) with a random W, so no output entry is ignored.
double check_op(const Builder& op, const Matrix& point, double eps, Rng& rng) {
  Tape probe;
  const Matrix out = op(probe, probe.constant(point)).value();
  const Matrix W = uniform(rng, out.rows(), out.cols(), 0.5, 1.5);
  auto f = [&](Tape& t, Var x) { return graph::sum(graph::cwise_mul(t.constant(W), op(t, x))); };
  return graph::grad_check(f, point, eps);
}

// Minimal tiny checkpoint with O(1) weights so no gradient is negligible.
Checkpoint tiny_checkpoint(const GradCheckConfig& c, Rng& rng) {
  ModelSpec spec;
  spec.d_z = c.d_z;
  spec.d_u = c.d_u;
  spec.d_x = c.d_x;
  spec.components = c.components;
  spec.decoder_hidden = c.decoder_hidden;
  spec.rnn_hidden = c.rnn_hidden;
  spec.K = c.K;
  spec.dt = c.dt;
  spec.init_noise = 0.3;
  Checkpoint ckpt = Checkpoint::init(spec, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  ckpt.net.visit([&](const std::string&, Matrix& m) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
  });
  ckpt.model.decoder.visit([&](const std::string&, Matrix& m) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
  });
  // keep every hidden relu active over the sampled latents
  if (c.decoder_hidden > 0) ckpt.model.decoder.b1.array() += 3.0;
  return ckpt;
}

std::map<std::string, Var*> named_fields(ModelVars& m) {
  return {{"dyn.a", &m.dynamics.a},     {"dyn.b", &m.dynamics.b},   {"dyn.c", &m.dynamics.c},
          {"dyn.mix_w", &m.dynamics.mix_w}, {"dyn.mix_b", &m.dynamics.mix_b}, {"dec.w1", &m.decoder.w1},
          {"dec.b1", &m.decoder.b1},    {"dec.w2", &m.decoder.w2},  {"dec.b2", &m.decoder.b2}};
}

std::map<std::string, Var*> named_fields(NetworkVars& n) {
  return {{"cell.wx", &n.cell_wx}, {"cell.wh", &n.cell_wh}, {"cell.b", &n.cell_b}, {"ctrl.w", &n.ctrl_w},
          {"ctrl.b", &n.ctrl_b},   {"init.w", &n.init_w},   {"init.b", &n.init_b}};
}

}  // namespace

std::vector<GradCheckEntry> op_grad_checks(const GradCheckConfig& config) {
  Rng rng(derive_seed(config.seed, 1));
  const double eps = config.eps;
  std::vector<GradCheckEntry> out;
  auto add = [&](const std::string& name, const Matrix& point, const Builder& op) {
    out.push_back({"op", name, check_op(op, point, eps, rng)});
  };
  auto rand = [&](Index r, Index c) { return uniform(rng, r, c, -1.0, 1.0); };

  const Matrix B = rand(4, 2);
  const Matrix A23 = rand(2, 3);
  const Matrix C34 = rand(3, 4);
  add("matmul(x, B)", rand(3, 4), [&](Tape& t, Var x) { return graph::matmul(x, t.constant(B)); });
  add("matmul(A, x)", rand(3, 4), [&](Tape& t, Var x) { return graph::matmul(t.constant(A23), x); });
  add("add", rand(3, 4), [&](Tape& t, Var x) { return x + t.constant(C34); });
  add("subtract", rand(3, 4), [&](Tape& t, Var x) { return t.constant(C34) - x; });
  add("negate", rand(3, 4), [](Tape&, Var x) { return -x; });
  add("scale", rand(3, 4), [](Tape&, Var x) { return 1.7 * x; });
  add("shift", rand(3, 4), [](Tape&, Var x) { return x + 0.3; });
  add("cwise-mul", rand(3, 4), [&](Tape& t, Var x) { return graph::cwise_mul(x, t.constant(C34)); });
  add("cwise-mul(x, x)", rand(3, 4), [](Tape&, Var x) { return graph::cwise_mul(x, x); });
  add("tanh", rand(3, 4), [](Tape&, Var x) { return graph::tanh(x); });
  add("relu", away_from_zero(rng, 3, 4, 0.2, 1.0), [](Tape&, Var x) { return graph::relu(x); });
  add("sigmoid", rand(3, 4), [](Tape&, Var x) { return graph::sigmoid(x); });
  add("softplus", rand(3, 4), [](Tape&, Var x) { return graph::softplus(x); });
  add("exp", rand(3, 4), [](Tape&, Var x) { return graph::exp(x); });
  add("log", uniform(rng, 3, 4, 0.5, 2.0), [](Tape&, Var x) { return graph::log(x); });
  add("square", rand(3, 4), [](Tape&, Var x) { return graph::square(x); });
  add("sqrt", uniform(rng, 3, 4, 0.5, 2.0), [](Tape&, Var x) { return graph::sqrt(x); });
  {
    // inside (-0.9, 0.9) and outside (1.1, 2) of the clamp window
    Matrix p = away_from_zero(rng, 3, 4, 0.05, 0.9);
    p.row(0) = away_from_zero(rng, 1, 4, 1.1, 2.0);
    add("clamp", p, [](Tape&, Var x) { return graph::clamp(x, -1.0, 1.0); });
  }
  add("softmax-rows", rand(3, 4), [](Tape&, Var x) { return graph::softmax_rows(x); });
  add("logsumexp", rand(3, 4), [](Tape&, Var x) { return graph::logsumexp(x); });
  add("sum", rand(3, 4), [](Tape&, Var x) { return graph::sum(x); });
  add("mean", rand(3, 4), [](Tape&, Var x) { return graph::mean(x); });
  add("concat-cols", rand(3, 4), [&](Tape& t, Var x) { return graph::hcat(x, t.constant(C34)); });
  add("concat-rows", rand(3, 4), [&](Tape& t, Var x) { return graph::vcat(t.constant(C34), x); });
  add("slice", rand(3, 4), [](Tape&, Var x) { return graph::block(x, 1, 1, 2, 2); });
  add("transpose", rand(3, 4), [](Tape&, Var x) { return graph::transpose(x); });
  add("reshape", rand(3, 4), [](Tape&, Var x) { return graph::reshape(x, 2, 6); });
  {
    const Matrix Aq = rand(3, 3);
    const Matrix xq = rand(3, 1);
    add("quadratic-form(x)", rand(3, 1), [&](Tape& t, Var x) { return graph::quad_form(x, t.constant(Aq)); });
    add("quadratic-form(A)", rand(3, 3), [&](Tape& t, Var A) { return graph::quad_form(t.constant(xq), A); });
  }
  add("cholesky", rand(3, 3), [](Tape& t, Var x) {
    Var spd = graph::matmul(x, graph::transpose(x)) + t.constant(3.0 * Matrix::Identity(3, 3));
    return graph::cholesky(spd);
  });
  {
    Matrix Lc = rand(3, 3).triangularView<Eigen::Lower>();
    Lc.diagonal().array() = Lc.diagonal().array().abs() + 1.0;
    const Matrix Bs = rand(3, 2);
    add("solve-lower(B)", rand(3, 2), [&](Tape& t, Var x) { return graph::solve_lower(t.constant(Lc), x); });
    add("solve-lower(L)", rand(1, 6), [&](Tape& t, Var v) {
      Var L = graph::tril_pack(v, 3) + t.constant(2.0 * Matrix::Identity(3, 3));
      return graph::solve_lower(L, t.constant(Bs));
    });
  }
  add("gather-rows", rand(3, 4), [](Tape&, Var x) { return graph::gather_rows(x, {2, 0, 0, 1}); });
  add("diagonal", rand(3, 3), [](Tape&, Var x) { return graph::diagonal(x); });
  add("tril-pack", rand(1, 6), [](Tape&, Var v) { return graph::tril_pack(v, 3); });
  add("row-sum", rand(3, 4), [](Tape&, Var x) { return graph::row_sum(x); });
  add("repeat-rows", rand(1, 4), [](Tape&, Var x) { return graph::repeat_rows(x, 3); });
  return out;
}

std::vector<GradCheckEntry> rollout_grad_checks(const GradCheckConfig& config) {
  Rng rng(derive_seed(config.seed, 2));
  const Checkpoint ckpt = tiny_checkpoint(config, rng);
  const Model& model = ckpt.model;
  const Index K = config.K;
  const Matrix x = uniform(rng, K, config.d_x, 0.0, 1.0);
  const auto noise = draw_noise(rng, config.L, K, config.d_z, config.d_u, config.dt);

  // Reference schedule with feedback on so gains and references matter.
  ControlSchedule schedule = ControlSchedule::zeros(K - 1, config.d_u, config.d_z);
  schedule.feedback = true;
  for (Index j = 0; j + 1 < K; ++j) {
    const auto k = static_cast<std::size_t>(j);
    schedule.feedforward[k] = uniform(rng, 1, config.d_u, -0.5, 0.5);
    schedule.gain[k] = uniform(rng, config.d_u, config.d_z, -0.5, 0.5);
    schedule.mu_ref[k] = uniform(rng, 1, config.d_z, -0.5, 0.5);
  }
  const Index packed = config.d_z * (config.d_z + 1) / 2;
  Matrix q0_packed = uniform(rng, 1, packed, -0.3, 0.3);
  for (Index i = 0, k = 0; i < config.d_z; ++i) {
    k += i;
    q0_packed(0, k) += 1.0;  // diagonal entry (i, i)
    ++k;
  }
  const RowVector q0_mean = uniform(rng, 1, config.d_z, -0.5, 0.5);

  // which: model tensor name, or "q0.mean", "q0.chol", "ff", "gain".
  auto build = [&](const std::string& which) {
    return [&, which](Tape& t, Var p) {
      ModelVars mv = lift(t, model, false);
      auto fields = named_fields(mv);
      if (auto it = fields.find(which); it != fields.end()) *it->second = p;
      GaussianVars q0{t.constant(q0_mean), graph::tril_pack(t.constant(q0_packed), config.d_z)};
      if (which == "q0.mean") q0.mean = p;
      if (which == "q0.chol") q0.chol = graph::tril_pack(p, config.d_z);
      ScheduleVars sv = lift(t, schedule, false);
      if (which == "ff") sv.feedforward[1] = p;
      if (which == "gain") sv.gain[0] = p;
      const auto traj = simulate(t, mv, q0, sv, StateCost::learning(x), noise);
      return graph::sum(traj.action);
    };
  };

  std::vector<GradCheckEntry> out;
  model.visit([&](const std::string& name, const Matrix& m) {
    out.push_back({"rollout", "S_u wrt " + name, graph::grad_check(build(name), m, config.eps)});
  });
  out.push_back({"rollout", "S_u wrt q0.mean", graph::grad_check(build("q0.mean"), q0_mean, config.eps)});
  out.push_back({"rollout", "S_u wrt q0.chol", graph::grad_check(build("q0.chol"), q0_packed, config.eps)});
  out.push_back({"rollout", "S_u wrt feedforward", graph::grad_check(build("ff"), schedule.feedforward[1], config.eps)});
  out.push_back({"rollout", "S_u wrt gain", graph::grad_check(build("gain"), schedule.gain[0], config.eps)});
  return out;
}

std::vector<GradCheckEntry> mco_grad_checks(const GradCheckConfig& config) {
  Rng rng(derive_seed(config.seed, 3));
  const Checkpoint ckpt = tiny_checkpoint(config, rng);
  const Matrix x = uniform(rng, config.K, config.d_x, 0.0, 1.0);
  AdaptConfig adapt;
  adapt.L = config.L;
  adapt.R = config.R;
  adapt.eta = 0.5;
  adapt.resample = false;
  adapt.update_init = true;
  adapt.weight_gradients = true;
  const std::uint64_t noise_seed = derive_seed(config.seed, 4);

  auto build = [&](const std::string& which) {
    return [&, which](Tape& t, Var p) {
      ModelVars mv = lift(t, ckpt.model, false);
      NetworkVars nv = lift(t, ckpt.net, false);
      auto mf = named_fields(mv);
      auto nf = named_fields(nv);
      if (auto it = mf.find(which.substr(6)); which.starts_with("model.") && it != mf.end()) *it->second = p;
      if (auto it = nf.find(which.substr(4)); which.starts_with("net.") && it != nf.end()) *it->second = p;
      Rng noise(noise_seed);
      auto inferred = infer(t, nv, x);
      auto result = adapt_loop(t, mv, inferred.q0, std::move(inferred.schedule), StateCost::learning(x), adapt, noise);
      return mco(result.paths.action);
    };
  };

  std::vector<GradCheckEntry> out;
  ckpt.visit([&](const std::string& name, const Matrix& m) {
    out.push_back({"mco", "MCO (R=" + std::to_string(config.R) + ") wrt " + name,
                   graph::grad_check(build(name), m, config.eps)});
  });
  return out;
}

std::vector<GradCheckEntry> grad_check_suite(const GradCheckConfig& config) {
  auto out = op_grad_checks(config);
  for (auto& e : rollout_grad_checks(config)) out.push_back(std::move(e));
  for (auto& e : mco_grad_checks(config)) out.push_back(std::move(e));
  return out;
}

}  // namespace apiae
