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

// Exact log evidence of a discretized linear-Gaussian state-space model,
// used as the reference the Monte Carlo bounds are checked against.
//
//   z_0 ~ N(mu0, P0)
//   z_k = (I + A dt) z_{k-1} + c dt + B dw_k,   dw_k ~ N(0, dt I)
//   x_{k+1} = C z_k + b + v_k,                  v_k ~ N(0, diag(obs_std^2))

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>

#include "apiae/errors.hpp"
#include "apiae/linalg.hpp"

namespace apiae {

template <typename Scalar>
struct LinearGaussianSystem {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mat A;        // d_z x d_z
  Vec c;        // d_z
  Mat B;        // d_z x d_u
  Mat C;        // d_x x d_z
  Vec b;        // d_x
  Vec obs_std;  // d_x
  Vec mu0;      // d_z
  Mat P0;       // d_z x d_z
  Scalar dt = Scalar(0.1);

  [[nodiscard]] Mat transition() const { return Mat::Identity(A.rows(), A.cols()) + A * dt; }
  [[nodiscard]] Mat process_cov() const { return B * B.transpose() * dt; }
  [[nodiscard]] Mat obs_cov() const { return obs_std.array().square().matrix().asDiagonal(); }
};

/// Kalman prediction-update recursion; x holds one observation per row.
template <typename Scalar, typename Derived>
Scalar exact_linear_evidence(const LinearGaussianSystem<Scalar>& sys, const Eigen::MatrixBase<Derived>& x) {
  using Mat = typename LinearGaussianSystem<Scalar>::Mat;
  using Vec = typename LinearGaussianSystem<Scalar>::Vec;
  const Index d_z = sys.A.rows();
  const Mat F = sys.transition();
  const Mat Q = sys.process_cov();
  const Mat Rc = sys.obs_cov();
  const Mat I = Mat::Identity(d_z, d_z);

  Vec m = sys.mu0;
  Mat P = sys.P0;
  Scalar total = 0;
  for (Index k = 0; k < x.rows(); ++k) {
    if (k > 0) {
      m = F * m + sys.c * sys.dt;
      P = F * P * F.transpose() + Q;
    }
    const Vec innovation = x.row(k).transpose().template cast<Scalar>() - (sys.C * m + sys.b);
    const Mat S = sys.C * P * sys.C.transpose() + Rc;
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("kalman: innovation covariance not positive definite");
    const Mat Lc = llt.matrixL();
    total += gaussian_logpdf_chol(innovation, Vec::Zero(innovation.size()), Lc);
    const Mat gain = llt.solve(sys.C * P).transpose();
    m += gain * innovation;
    const Mat J = I - gain * sys.C;
    P = J * P * J.transpose() + gain * Rc * gain.transpose();
  }
  return total;
}

}  // namespace apiae
