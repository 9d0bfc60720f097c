/*
 * Copyright 2026 The mmfhe Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MMFHE_KERNEL_HPP_
#define MMFHE_KERNEL_HPP_

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "mmfhe/errors.hpp"

namespace mmfhe {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Points are stored one per row throughout the library.
using PointSet = MatrixXd;

/// Parameters of the ARD squared-exponential kernel
///   kr(x, z) = sigma2 * exp(-0.5 * sum_k w_k (x_k - z_k)^2).
struct KernelParams {
  double sigma2 = 1.0;
  VectorXd weights;

  Index dim() const { return weights.size(); }

  void validate() const {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
      throw InputError("kernel: sigma2 must be positive and finite");
    }
    for (Index k = 0; k < weights.size(); ++k) {
      if (!(weights[k] >= 0.0) || !std::isfinite(weights[k])) {
        throw InputError("kernel: weights must be finite and non-negative");
      }
    }
  }

  KernelParams with_sigma2(double s2) const { return {s2, weights}; }
};

namespace detail {

inline void check_dim(Index got, Index want, const char *what) {
  if (got != want) {
    throw InputError(std::string(what) + ": dimension mismatch (got " +
                     std::to_string(got) + ", expected " +
                     std::to_string(want) + ")");
  }
}

template <typename A, typename B>
double weighted_sqdist(const A &x, const B &z, const VectorXd &w) {
  double acc = 0.0;
  for (Index k = 0; k < w.size(); ++k) {
    const double d = x[k] - z[k];
    acc += w[k] * d * d;
  }
  return acc;
}

}  // namespace detail

template <typename A, typename B>
double kernel_eval(const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &z,
                   const KernelParams &params) {
  detail::check_dim(x.size(), params.dim(), "kernel_eval");
  detail::check_dim(z.size(), params.dim(), "kernel_eval");
  return params.sigma2 *
         std::exp(-0.5 * detail::weighted_sqdist(x.derived(), z.derived(),
                                                 params.weights));
}

/// Entry (i, j) is kr(rows_i, cols_j). Symmetric bit-for-bit when
/// rows and cols are the same set.
inline MatrixXd gram(const PointSet &rows, const PointSet &cols,
                     const KernelParams &params) {
  if (rows.rows() == 0 || cols.rows() == 0) {
    throw InputError("gram: empty point list");
  }
  detail::check_dim(rows.cols(), params.dim(), "gram");
  detail::check_dim(cols.cols(), params.dim(), "gram");
  MatrixXd out(rows.rows(), cols.rows());
  for (Index j = 0; j < cols.rows(); ++j) {
    for (Index i = 0; i < rows.rows(); ++i) {
      out(i, j) = params.sigma2 *
                  std::exp(-0.5 * detail::weighted_sqdist(
                                      rows.row(i), cols.row(j), params.weights));
    }
  }
  return out;
}

/// G(x) = [kr(x, a^1), ..., kr(x, a^M)].
template <typename A>
RowVectorXd g_vector(const Eigen::MatrixBase<A> &x, const PointSet &inducing,
                     const KernelParams &params) {
  if (inducing.rows() == 0) throw InputError("g_vector: no inducing points");
  detail::check_dim(x.size(), params.dim(), "g_vector");
  detail::check_dim(inducing.cols(), params.dim(), "g_vector");
  RowVectorXd g(inducing.rows());
  for (Index m = 0; m < inducing.rows(); ++m) {
    g[m] = params.sigma2 * std::exp(-0.5 * detail::weighted_sqdist(
                                               x.derived(), inducing.row(m),
                                               params.weights));
  }
  return g;
}

/// K_xx (N x N), K_aa (M x M) and K_xa (N x M) for one training set.
/// K_aa is stored without jitter; see factor_spd().
struct GramMatrices {
  MatrixXd k_xx;
  MatrixXd k_aa;
  MatrixXd k_xa;

  Index n_samples() const { return k_xa.rows(); }
  Index n_inducing() const { return k_xa.cols(); }

  static GramMatrices build(const PointSet &x, const PointSet &inducing,
                            const KernelParams &params) {
    params.validate();
    return {gram(x, x, params), gram(inducing, inducing, params),
            gram(x, inducing, params)};
  }
};

inline constexpr double kBaseJitter = 1e-10;
inline constexpr double kMaxJitter = 1e-6;

/// Cholesky factor of K + jitter * I. Jitter starts at kBaseJitter * scale
/// and grows tenfold until the factorization succeeds or kMaxJitter * scale
/// is exceeded.
struct SpdFactor {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;

  Index size() const { return llt.rows(); }
  MatrixXd solve(const MatrixXd &rhs) const { return llt.solve(rhs); }
  /// L^{-1} rhs.
  MatrixXd half_solve(const MatrixXd &rhs) const {
    return llt.matrixL().solve(rhs);
  }
};

inline SpdFactor factor_spd(const MatrixXd &k, double scale,
                            double base = kBaseJitter) {
  if (k.rows() != k.cols() || k.rows() == 0) {
    throw InputError("factor_spd: matrix must be square and non-empty");
  }
  const double top = kMaxJitter * scale;
  for (double jitter = base * scale; jitter <= top * (1.0 + 1e-12);
       jitter *= 10.0) {
    MatrixXd shifted = k;
    shifted.diagonal().array() += jitter;
    SpdFactor f{Eigen::LLT<MatrixXd>(shifted), jitter};
    if (f.llt.info() == Eigen::Success) return f;
  }
  throw NumericError("factor_spd: matrix not positive definite after jitter");
}

/// Default weights: w_k = (max_i x_k - min_i x_k)^-2, or 0 for a constant
/// feature.
inline VectorXd default_weights(const PointSet &x) {
  if (x.rows() == 0) throw InputError("default_weights: empty data");
  VectorXd w(x.cols());
  for (Index k = 0; k < x.cols(); ++k) {
    const double range = x.col(k).maxCoeff() - x.col(k).minCoeff();
    w[k] = range > 0.0 ? 1.0 / (range * range) : 0.0;
  }
  return w;
}

}  // namespace mmfhe

#endif  // MMFHE_KERNEL_HPP_
