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

// Small dense helpers shared by the sampler, the moment updates and the
// Gaussian oracle. Templated on the scalar like the Eigen routines they wrap.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "apiae/errors.hpp"

namespace apiae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

// splitmix64 finalizer; gives independent per-stream seeds from (base, ids).
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b + 0x632be59bd9b4e019ULL));
}

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> standard_normal(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<Scalar> n(0, 1);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = n(rng);
  return out;
}

// log N(x; mean, L L^T) for a lower Cholesky factor L.
template <typename DerivedX, typename DerivedM, typename DerivedL>
typename DerivedX::Scalar gaussian_logpdf_chol(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedM>& mean,
                                               const Eigen::MatrixBase<DerivedL>& chol) {
  using Scalar = typename DerivedX::Scalar;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d = (x - mean).eval().reshaped();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y = chol.template triangularView<Eigen::Lower>().solve(d);
  const Scalar n = static_cast<Scalar>(d.size());
  return Scalar(-0.5) * y.squaredNorm() - chol.diagonal().array().log().sum() -
         Scalar(0.5) * n * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

// log N(x; mean, S) with S dense symmetric positive definite.
template <typename DerivedX, typename DerivedM, typename DerivedS>
typename DerivedX::Scalar gaussian_logpdf(const Eigen::MatrixBase<DerivedX>& x,
                                          const Eigen::MatrixBase<DerivedM>& mean,
                                          const Eigen::MatrixBase<DerivedS>& cov) {
  using Scalar = typename DerivedX::Scalar;
  Eigen::LLT<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian_logpdf: covariance not positive definite");
  return gaussian_logpdf_chol(x, mean, llt.matrixL().toDenseMatrix());
}

// Weighted mean (row) of the rows of Z.
template <typename DerivedZ, typename DerivedW>
Eigen::Matrix<typename DerivedZ::Scalar, 1, Eigen::Dynamic> weighted_mean(const Eigen::MatrixBase<DerivedZ>& Z,
                                                                           const Eigen::MatrixBase<DerivedW>& w) {
  return w.transpose() * Z;
}

// Weighted covariance sum_l w_l (z_l - mu)(z_l - mu)^T.
template <typename DerivedZ, typename DerivedW>
Eigen::Matrix<typename DerivedZ::Scalar, Eigen::Dynamic, Eigen::Dynamic> weighted_covariance(
    const Eigen::MatrixBase<DerivedZ>& Z, const Eigen::MatrixBase<DerivedW>& w) {
  const auto mu = weighted_mean(Z, w);
  const auto D = (Z.rowwise() - mu).eval();
  return D.transpose() * w.asDiagonal() * D;
}

// Inverse of a lower-triangular factor.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> lower_inverse(
    const Eigen::MatrixBase<Derived>& L) {
  using M = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  return L.template triangularView<Eigen::Lower>().solve(M::Identity(L.rows(), L.cols()));
}

}  // namespace apiae
