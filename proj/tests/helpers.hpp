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

// Shared fixtures: a small linear-Gaussian instance with exact evidence and
// an independent dense joint-Gaussian evidence oracle.

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>
#include <vector>

#include "apiae/kalman.hpp"
#include "apiae/model.hpp"
#include "apiae/train.hpp"

namespace apiae::testing {

struct LinearInstance {
  Checkpoint ckpt;
  LinearGaussianSystem<double> sys;
};

// d_z = d_u = 2, d_x = 3, one linear component, affine decoder with
// constant standard deviation `obs_std`. The network proposes
// q0 = N(mu0_bias, I) and u = 0 for every sequence.
inline LinearInstance linear_instance(Index K = 5, double obs_std = 0.8, RowVector mu0_bias = RowVector::Zero(2)) {
  const Index d_z = 2, d_u = 2, d_x = 3;
  Model m;
  m.d_z = d_z;
  m.d_u = d_u;
  m.d_x = d_x;
  m.K = K;
  m.dt = 0.1;
  m.dynamics = LocallyLinearDynamics::zeros(d_z, d_u, 1);
  Matrix A(2, 2);
  A << -0.5, 1.0, -1.0, -0.5;
  Matrix B(2, 2);
  B << 0.8, 0.1, 0.0, 0.6;
  RowVector c(2);
  c << 0.1, -0.2;
  m.dynamics.set_component(0, A, B, c);
  m.decoder.d_z = d_z;
  m.decoder.d_x = d_x;
  m.decoder.hidden = 0;
  Matrix C(3, 2);
  C << 1.0, 0.5, -0.3, 0.8, 0.6, -0.4;
  m.decoder.w2 = Matrix::Zero(d_z, 2 * d_x);
  m.decoder.w2.leftCols(d_x) = C.transpose();
  m.decoder.b2 = RowVector::Zero(2 * d_x);
  m.decoder.b2(0) = 0.2;
  m.decoder.b2(1) = -0.1;
  m.decoder.b2(2) = 0.05;
  m.decoder.b2.rightCols(d_x).setConstant(std::log(obs_std));
  m.prior = InitialPrior::standard(d_z);

  InferenceNetwork net = InferenceNetwork::zeros(d_x, 4, d_z, d_u);
  net.init_b.leftCols(d_z) = mu0_bias;
  // softplus(raw) + 1e-4 == 1 on the diagonal
  const double raw = std::log(std::expm1(1.0 - InferenceNetwork::kCholFloor));
  net.init_b(0, d_z) = raw;
  net.init_b(0, d_z + 2) = raw;

  LinearInstance out{Checkpoint{std::move(m), std::move(net)}, {}};
  out.sys = linear_system(out.ckpt.model);
  return out;
}

// One sequence drawn from the instance's own generative process.
inline Matrix sample_sequence(const LinearGaussianSystem<double>& sys, Index K, Rng& rng) {
  const Index d_z = sys.A.rows();
  const Index d_u = sys.B.cols();
  const Index d_x = sys.C.rows();
  const Matrix P0chol = sys.P0.llt().matrixL();
  Vector z = sys.mu0 + P0chol * standard_normal(rng, d_z, 1);
  Matrix x(K, d_x);
  for (Index k = 0; k < K; ++k) {
    if (k > 0) z = sys.transition() * z + sys.c * sys.dt + sys.B * (std::sqrt(sys.dt) * standard_normal(rng, d_u, 1));
    x.row(k) = (sys.C * z + sys.b + sys.obs_std.cwiseProduct(Vector(standard_normal(rng, d_x, 1)))).transpose();
  }
  return x;
}

// log p(x_{1:K}) from the full K d_x joint Gaussian, evaluated once.
inline double dense_linear_evidence(const LinearGaussianSystem<double>& sys, const Matrix& x) {
  const Index K = x.rows();
  const Index d_z = sys.A.rows();
  const Index d_x = sys.C.rows();
  const Matrix F = sys.transition();
  const Matrix Q = sys.process_cov();
  // state means and cross-covariances Cov(z_i, z_j)
  std::vector<Vector> mean(static_cast<std::size_t>(K));
  std::vector<Matrix> var(static_cast<std::size_t>(K));
  mean[0] = sys.mu0;
  var[0] = sys.P0;
  for (Index k = 1; k < K; ++k) {
    mean[k] = F * mean[k - 1] + sys.c * sys.dt;
    var[k] = F * var[k - 1] * F.transpose() + Q;
  }
  Matrix cov = Matrix::Zero(K * d_x, K * d_x);
  Vector mu(K * d_x);
  for (Index i = 0; i < K; ++i) {
    mu.segment(i * d_x, d_x) = sys.C * mean[i] + sys.b;
    for (Index j = i; j < K; ++j) {
      // Cov(z_j, z_i) = F^{j-i} Var(z_i)
      Matrix Fp = Matrix::Identity(d_z, d_z);
      for (Index s = i; s < j; ++s) Fp = F * Fp;
      const Matrix block = sys.C * Fp * var[i] * sys.C.transpose();
      cov.block(j * d_x, i * d_x, d_x, d_x) = block;
      cov.block(i * d_x, j * d_x, d_x, d_x) = block.transpose();
    }
    cov.block(i * d_x, i * d_x, d_x, d_x) += sys.obs_cov();
  }
  Vector flat(K * d_x);
  for (Index k = 0; k < K; ++k) flat.segment(k * d_x, d_x) = x.row(k).transpose();
  const Vector d = flat - mu;
  Eigen::LDLT<Matrix> ldlt(cov);
  const double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (d.dot(ldlt.solve(d)) + logdet + static_cast<double>(K * d_x) * std::log(2.0 * std::numbers::pi));
}

}  // namespace apiae::testing
