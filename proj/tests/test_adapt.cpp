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

#include "doctest.h"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <numbers>

#include "apiae/adapt.hpp"
#include "apiae/errors.hpp"
#include "helpers.hpp"

using namespace apiae;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Hand-built ensemble with K = 2 states and one step.
Ensemble two_state_ensemble(const Matrix& z0, const Matrix& z1, const Matrix& dw, const Vector& S, double floor = 1e-6) {
  Ensemble e;
  e.z = {z0, z1};
  e.u = {Matrix::Zero(dw.rows(), dw.cols())};
  e.dw = {dw};
  e.action = S;
  e.state_cost = Vector::Zero(S.size());
  const auto w = weights(S);
  e.weights = w.normalized;
  e.log_weights = w.log_weights;
  e.log_mean_exp = w.log_mean_exp;
  for (const auto& zk : e.z) e.moments.push_back(moments(zk, e.weights, floor));
  e.resampled.resize(1);
  return e;
}

Matrix sym_sqrt(const Matrix& S) { return Eigen::SelfAdjointEigenSolver<Matrix>(S).operatorSqrt(); }
Matrix sym_inv_sqrt(const Matrix& S) { return Eigen::SelfAdjointEigenSolver<Matrix>(S).operatorInverseSqrt(); }

// Exact posterior of the linear instance, expressed as an initial
// distribution plus a linear feedback schedule (mu_ref = 0, Sigma_ref = I).
struct OptimalProposal {
  GaussianDist q0;
  ControlSchedule schedule;
};

OptimalProposal optimal_proposal(const LinearGaussianSystem<double>& sys, const Matrix& x) {
  const Index K = x.rows();
  const Index d = sys.A.rows();
  const Matrix F = sys.transition();
  const Matrix Qi = sys.process_cov().inverse();
  const Matrix Ri = sys.obs_cov().inverse();
  const Vector cdt = sys.c * sys.dt;
  // Backward messages p(x_{k:K} | z_k) ~ exp(-z'Jz/2 + h'z).
  std::vector<Matrix> J(static_cast<std::size_t>(K));
  std::vector<Vector> h(static_cast<std::size_t>(K));
  for (Index k = K - 1; k >= 0; --k) {
    const auto s = static_cast<std::size_t>(k);
    J[s] = sys.C.transpose() * Ri * sys.C;
    h[s] = sys.C.transpose() * Ri * (x.row(k).transpose() - sys.b);
    if (k + 1 < K) {
      const Matrix G = (Qi + J[s + 1]).inverse();
      const Matrix Jt = Qi - Qi * G * Qi;
      const Vector ht = Qi * G * h[s + 1];
      J[s] += F.transpose() * Jt * F;
      h[s] += F.transpose() * (ht - Jt * cdt);
    }
  }
  OptimalProposal out;
  const Matrix P0i = sys.P0.inverse();
  const Matrix post = (P0i + J[0]).inverse();
  out.q0.mean = (post * (P0i * sys.mu0 + h[0])).transpose();
  out.q0.chol = post.llt().matrixL();
  out.schedule = ControlSchedule::zeros(K - 1, sys.B.cols(), d);
  out.schedule.feedback = true;
  const Matrix Bdt_inv = (sys.B * sys.dt).inverse();
  for (Index k = 0; k + 1 < K; ++k) {
    const auto s = static_cast<std::size_t>(k);
    const Matrix G = (Qi + J[s + 1]).inverse();
    const Matrix M = G * Qi - Matrix::Identity(d, d);
    out.schedule.feedforward[s] = (Bdt_inv * (M * cdt + G * h[s + 1])).transpose();
    out.schedule.gain[s] = Bdt_inv * M * F;
  }
  return out;
}

Vector actions(const Checkpoint& ck, const GaussianDist& q0, const ControlSchedule& sched, const Matrix& x, Index L,
               Rng& rng) {
  graph::Tape t;
  const auto mv = lift(t, ck.model, false);
  const auto noise = draw_noise(rng, L, x.rows(), 2, 2, ck.model.dt);
  const auto traj = simulate(t, mv, lift(t, q0, false), lift(t, sched, false), StateCost::learning(x), noise);
  return traj.action_values();
}

}  // namespace

TEST_CASE("weights examples") {
  const auto a = weights(vec({0.0, 0.0}));
  CHECK(a.normalized(0) == 0.5);
  CHECK(a.normalized(1) == 0.5);
  CHECK(a.log_mean_exp == doctest::Approx(0.0).scale(1e-15));

  const auto b = weights(vec({0.0, std::log(3.0)}));
  CHECK(b.normalized(0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(b.normalized(1) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(b.log_mean_exp == doctest::Approx(std::log(2.0 / 3.0)).epsilon(1e-14));

  const Vector S = vec({1.3, -0.4, 2.2, 0.7});
  const auto c = weights(S);
  const auto d = weights((S.array() + 5.0).matrix());
  CHECK((c.normalized - d.normalized).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(d.log_mean_exp == doctest::Approx(c.log_mean_exp - 5.0).epsilon(1e-14));
  CHECK(c.normalized.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((c.log_weights.array().exp().matrix() - c.normalized).norm() < 1e-15);

  // Huge actions stay finite through max-stabilisation.
  const auto e = weights(vec({1e4, 1e4 + 1.0}));
  CHECK(std::isfinite(e.log_mean_exp));
  CHECK(e.normalized(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK_THROWS_AS((void)weights(vec({0.0, std::nan("")})), NumericalError);
}

TEST_CASE("ess examples") {
  CHECK(ess(Vector::Constant(8, 0.125)) == doctest::Approx(8.0));
  CHECK(ess(vec({0.0, 1.0, 0.0})) == 1.0);
  CHECK(ess(vec({0.75, 0.25})) == doctest::Approx(1.6));
}

TEST_CASE("systematic resampling examples") {
  const auto uniform = systematic_resample(Vector::Constant(5, 0.2), 0.37);
  for (Index i = 0; i < 5; ++i) CHECK(uniform[static_cast<std::size_t>(i)] == i);
  const auto one_hot = systematic_resample(vec({0.0, 0.0, 1.0, 0.0}), 0.9);
  for (Index i : one_hot) CHECK(i == 2);
}

TEST_CASE("systematic resampling has the right expected offspring") {
  const Vector w = vec({0.5, 0.25, 0.25});
  Rng rng(123);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int trials = 20000;
  Vector sum = Vector::Zero(3);
  Vector sq = Vector::Zero(3);
  for (int t = 0; t < trials; ++t) {
    Vector count = Vector::Zero(3);
    for (Index i : systematic_resample(w, uni(rng))) count(i) += 1.0;
    sum += count;
    sq += count.cwiseProduct(count);
  }
  for (Index i = 0; i < 3; ++i) {
    const double mean = sum(i) / trials;
    const double var = sq(i) / trials - mean * mean;
    CHECK(std::abs(mean - 3.0 * w(i)) <= 3.0 * std::sqrt(var / trials) + 1e-12);
  }
}

TEST_CASE("resampling an ensemble copies prefixes and resets weights") {
  Matrix z0(3, 2), z1(3, 2), dw(3, 2);
  z0 << 0, 0, 1, 1, 2, 2;
  z1 << 5, 5, 6, 6, 7, 7;
  dw << 0.1, 0.1, 0.2, 0.2, 0.3, 0.3;
  const auto e = two_state_ensemble(z0, z1, dw, vec({50.0, 0.0, 50.0}));
  Rng rng(1);
  const auto r = resample(e, rng);
  CHECK(r.z[0] == Matrix(z0.row(1).replicate(3, 1)));
  CHECK(r.dw[0] == Matrix(dw.row(1).replicate(3, 1)));
  CHECK((r.weights.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  CHECK(r.action(0) == doctest::Approx(-e.log_mean_exp));
  CHECK(r.resampled.back() == std::vector<Index>{1, 1, 1});
}

TEST_CASE("moments examples") {
  Matrix Z(3, 2);
  Z << 1, 2, 3, 4, 5, 6;
  const auto one_hot = moments(Z, vec({0.0, 1.0, 0.0}), 1e-6);
  CHECK(one_hot.mean == Z.row(1));
  CHECK((one_hot.chol * one_hot.chol.transpose() - 1e-6 * Matrix::Identity(2, 2)).norm() < 1e-15);

  Matrix P(2, 2);
  P << 1, 0, -1, 0;
  const auto pair = moments(P, vec({0.5, 0.5}), 1e-6);
  CHECK(pair.mean.isZero(0.0));
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 1.0 + 1e-6;
  expected(1, 1) = 1e-6;
  CHECK((pair.chol * pair.chol.transpose() - expected).norm() < 1e-14);
}

TEST_CASE("moments match a literal weighted sum") {
  Rng rng(9);
  const Matrix Z = standard_normal(rng, 7, 3);
  Vector w = standard_normal(rng, 7, 1).cwiseAbs();
  w /= w.sum();
  const auto m = moments(Z, w, 1e-6);
  Vector mu = Vector::Zero(3);
  for (Index l = 0; l < 7; ++l) mu += w(l) * Z.row(l).transpose();
  Matrix cov = 1e-6 * Matrix::Identity(3, 3);
  for (Index l = 0; l < 7; ++l) {
    const Vector d = Z.row(l).transpose() - mu;
    cov += w(l) * d * d.transpose();
  }
  CHECK((m.mean.transpose() - mu).norm() < 1e-12);
  CHECK((m.chol * m.chol.transpose() - cov).norm() < 1e-12);
  CHECK(m.chol.isLowerTriangular());
}

TEST_CASE("feedforward update examples") {
  SUBCASE("the 0.25 increment") {
    Matrix z(2, 1);
    z << 0.0, 0.0;
    Matrix dw(2, 1);
    dw << 0.1, -0.1;
    const auto e = two_state_ensemble(z, z, dw, vec({0.0, std::log(3.0)}));
    auto s = ControlSchedule::zeros(1, 1, 1);
    const auto next = update_feedforward(s, e, 0.5, 0.1);
    CHECK(next.feedforward[0](0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(next.mu_ref[0] == e.moments[0].mean);
  }
  SUBCASE("zero gain and eta 1") {
    Rng rng(3);
    const Matrix z = standard_normal(rng, 4, 2);
    const Matrix dw = standard_normal(rng, 4, 2);
    const auto e = two_state_ensemble(z, z, dw, vec({0.3, 0.1, -0.2, 0.5}));
    auto s = ControlSchedule::zeros(1, 2, 2);
    s.feedforward[0] << 0.4, -0.1;
    const auto next = update_feedforward(s, e, 1.0, 0.1);
    const RowVector expected = s.feedforward[0] + (e.weights.transpose() * dw) / 0.1;
    CHECK((next.feedforward[0] - expected).norm() < 1e-13);
  }
  SUBCASE("zero noise leaves the schedule unchanged") {
    Rng rng(4);
    const Matrix z = standard_normal(rng, 4, 2);
    const auto e = two_state_ensemble(z, z, Matrix::Zero(4, 2), vec({0.3, 0.1, -0.2, 0.5}));
    auto s = ControlSchedule::zeros(1, 2, 2);
    s.feedforward[0] << 0.4, -0.1;
    CHECK(update_feedforward(s, e, 0.5, 0.1).feedforward[0] == s.feedforward[0]);
  }
}

TEST_CASE("gain update examples") {
  Rng rng(5);
  const Matrix z = standard_normal(rng, 5, 2);
  const Vector S = standard_normal(rng, 5, 1);
  SUBCASE("zero gain and zero noise") {
    const auto e = two_state_ensemble(z, z, Matrix::Zero(5, 2), S);
    const auto s = ControlSchedule::zeros(1, 2, 2);
    CHECK(update_gain(s, e, 0.9, 0.1).gain[0].isZero(0.0));
  }
  SUBCASE("unchanged covariance keeps the gain") {
    const auto e = two_state_ensemble(z, z, Matrix::Zero(5, 2), S);
    auto s = ControlSchedule::zeros(1, 2, 2);
    s.gain[0] = standard_normal(rng, 2, 2);
    s.sigma_ref_chol[0] = e.moments[0].chol;
    const auto next = update_gain(s, e, 0.9, 0.1);
    CHECK((next.gain[0] - s.gain[0]).norm() < 1e-12);
    CHECK(next.sigma_ref_chol[0] == e.moments[0].chol);
  }
}

TEST_CASE("gain update matches symmetric square roots on diagonal covariances") {
  // Four equally weighted points placed symmetrically give a diagonal covariance.
  Matrix z(4, 2);
  z << 1.5, 0.3, -0.5, 0.3, 0.5, 1.1, 0.5, -0.5;
  const Vector S = Vector::Zero(4);
  Rng rng(6);
  const Matrix dw = standard_normal(rng, 4, 2);
  const double floor = 1e-6;
  const auto e = two_state_ensemble(z, z, dw, S, floor);
  auto s = ControlSchedule::zeros(1, 2, 2);
  s.feedback = true;
  s.gain[0] = standard_normal(rng, 2, 2);
  Vector bar(2);
  bar << 0.7, 1.9;
  s.sigma_ref_chol[0] = bar.cwiseSqrt().asDiagonal();

  const double eta = 0.9;
  const double dt = 0.1;
  const RowVector mu = e.weights.transpose() * z;
  Matrix sigma = floor * Matrix::Identity(2, 2);
  for (Index l = 0; l < 4; ++l) sigma += e.weights(l) * (z.row(l) - mu).transpose() * (z.row(l) - mu);
  REQUIRE(std::abs(sigma(0, 1)) < 1e-14);
  const Matrix sigma_bar = bar.asDiagonal();
  Matrix expected = s.gain[0] * sym_inv_sqrt(sigma_bar) * sym_sqrt(sigma);
  for (Index l = 0; l < 4; ++l)
    expected += (eta / dt) * e.weights(l) * dw.row(l).transpose() * (sym_inv_sqrt(sigma) * (z.row(l) - mu).transpose()).transpose();
  CHECK((update_gain(s, e, eta, dt).gain[0] - expected).norm() < 1e-9);
}

TEST_CASE("initial distribution update is the weighted moment match") {
  Rng rng(7);
  const Matrix z0 = standard_normal(rng, 6, 2);
  const Vector S = standard_normal(rng, 6, 1);
  const auto e = two_state_ensemble(z0, z0, Matrix::Zero(6, 2), S);
  const auto q = update_init(e, 1e-6);
  const auto m = moments(z0, e.weights, 1e-6);
  CHECK((q.mean - m.mean).norm() < 1e-15);
  CHECK((q.chol - m.chol).norm() < 1e-15);

  // Tape version agrees with the value version.
  graph::Tape t;
  Trajectories traj;
  traj.z = {t.constant(z0)};
  const auto qv = update_init(traj, e.weights, 1e-6);
  CHECK((qv.mean.value() - q.mean).norm() < 1e-13);
  CHECK((qv.chol.value() - q.chol).norm() < 1e-12);
}

TEST_CASE("adapt_loop on an uninformative model keeps uniform weights") {
  // Observations carry no information: likelihood is flat and q0 is the prior.
  auto inst = testing::linear_instance(4, 1.0);
  auto& dec = inst.ckpt.model.decoder;
  dec.w2.setZero();
  graph::Tape t;
  const auto mv = lift(t, inst.ckpt.model, false);
  GaussianDist q0{RowVector::Zero(2), Matrix::Identity(2, 2)};
  const auto sched = ControlSchedule::zeros(3, 2, 2);
  const Matrix x = Matrix::Zero(4, 3);
  AdaptConfig cfg;
  cfg.L = 16;
  cfg.R = 3;
  cfg.update_init = false;
  Rng rng(8);
  const auto out =
      adapt_loop(t, mv, lift(t, q0, false), lift(t, sched, false), StateCost::learning(x), cfg, rng);
  REQUIRE(out.rounds.size() == 4);
  // With u = 0 every path has the same action at round 0.
  CHECK(out.rounds[0].ess == doctest::Approx(16.0).epsilon(1e-12));
  for (const auto& r : out.rounds) {
    CHECK(r.ess >= 1.0);
    CHECK(r.ess <= 16.0 + 1e-9);
  }
  CHECK(out.ensemble.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adapt_loop with R = 0 is the importance-weighted estimator") {
  auto inst = testing::linear_instance(5);
  Rng data_rng(10);
  const Matrix x = testing::sample_sequence(inst.sys, 5, data_rng);
  AdaptConfig cfg;
  cfg.L = 12;
  cfg.R = 0;
  graph::Tape t;
  const auto mv = lift(t, inst.ckpt.model, false);
  const auto inf = infer(inst.ckpt.net, x);
  Rng rng(11);
  const auto out = adapt_loop(t, mv, lift(t, inf.q0, false), lift(t, inf.schedule, false), StateCost::learning(x),
                              cfg, rng);
  // Same noise drawn directly.
  Rng replay(11);
  const auto noise = draw_noise(replay, 12, 5, 2, 2, 0.1);
  graph::Tape t2;
  const auto mv2 = lift(t2, inst.ckpt.model, false);
  const auto traj = simulate(t2, mv2, lift(t2, inf.q0, false), lift(t2, inf.schedule, false), StateCost::learning(x),
                             noise);
  CHECK(out.rounds.size() == 1);
  CHECK((out.ensemble.action - traj.action_values()).norm() < 1e-12);
  CHECK(out.ensemble.log_mean_exp == doctest::Approx(weights(traj.action_values()).log_mean_exp).epsilon(1e-14));
}

TEST_CASE("observer sees every round") {
  auto inst = testing::linear_instance(4);
  Rng rng(12);
  const Matrix x = testing::sample_sequence(inst.sys, 4, rng);
  AdaptConfig cfg;
  cfg.L = 4;
  cfg.R = 3;
  graph::Tape t;
  const auto mv = lift(t, inst.ckpt.model, false);
  const auto inf = infer(inst.ckpt.net, x);
  std::vector<Index> seen;
  std::vector<double> lme;
  const auto out = adapt_loop(t, mv, lift(t, inf.q0, false), lift(t, inf.schedule, false), StateCost::learning(x), cfg,
                              rng, [&](Index r, const Ensemble& e) {
                                seen.push_back(r);
                                lme.push_back(e.log_mean_exp);
                              });
  CHECK(seen == std::vector<Index>{0, 1, 2, 3});
  for (std::size_t r = 0; r < 4; ++r) CHECK(lme[r] == out.rounds[r].log_mean_exp);
}

TEST_CASE("constant cost offsets shift the bound and nothing else") {
  auto inst = testing::linear_instance(5, 0.8, RowVector::Constant(2, 0.7));
  Rng data_rng(13);
  const Matrix x = testing::sample_sequence(inst.sys, 5, data_rng);
  AdaptConfig cfg;
  cfg.L = 8;
  cfg.R = 3;
  const double c = 4.25;
  auto run = [&](double offset) {
    graph::Tape t;
    const auto mv = lift(t, inst.ckpt.model, true);
    const auto nv = lift(t, inst.ckpt.net, true);
    auto inf = infer(t, nv, x);
    auto cost = StateCost::learning(x);
    cost.offset = offset;
    Rng rng(14);
    auto out = adapt_loop(t, mv, inf.q0, std::move(inf.schedule), cost, cfg, rng);
    const auto ens = out.ensemble;
    const auto sched = values(out.schedule);
    const auto g = t.backward(graph::logsumexp(transpose(-out.paths.action)));
    std::vector<Matrix> grads;
    for (const auto& p : mv.params) grads.push_back(g[p]);
    for (const auto& p : nv.params) grads.push_back(g[p]);
    return std::tuple{ens, sched, grads};
  };
  const auto [e0, s0, g0] = run(0.0);
  const auto [e1, s1, g1] = run(c);
  CHECK(e1.log_mean_exp == doctest::Approx(e0.log_mean_exp - c).epsilon(1e-12));
  CHECK((e1.weights - e0.weights).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t k = 0; k < 4; ++k) CHECK((s1.feedforward[k] - s0.feedforward[k]).norm() < 1e-9);
  for (std::size_t i = 0; i < g0.size(); ++i) CHECK((g1[i] - g0[i]).norm() <= 1e-9 * (1.0 + g0[i].norm()));
}

TEST_CASE("the exact posterior proposal has near-uniform weights") {
  // Loose observations keep the posterior transition variance close to the
  // proposal's fixed B B^T dt, the only mismatch left.
  auto inst = testing::linear_instance(5, 3.0);
  Rng data_rng(15);
  const Matrix x = testing::sample_sequence(inst.sys, 5, data_rng);
  const auto opt = optimal_proposal(inst.sys, x);
  Rng rng(16);
  const Index L = 4000;
  const Vector S = actions(inst.ckpt, opt.q0, opt.schedule, x, L, rng);
  const auto w = weights(S);
  CHECK(ess(w.normalized) / static_cast<double>(L) >= 0.95);
  // And the estimator sits on the exact evidence.
  CHECK(std::abs(w.log_mean_exp - exact_linear_evidence(inst.sys, x)) < 0.01);

  // Dropping the feedback gains loses the match.
  auto open_loop = opt.schedule;
  open_loop.feedback = false;
  Rng rng2(16);
  const Vector S2 = actions(inst.ckpt, opt.q0, open_loop, x, L, rng2);
  CHECK(ess(weights(S2).normalized) < ess(w.normalized));
}
