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

#ifndef MMFHE_MEMBERSHIP_MAPPING_HPP_
#define MMFHE_MEMBERSHIP_MAPPING_HPP_

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmfhe/errors.hpp"
#include "mmfhe/kernel.hpp"
#include "mmfhe/kmeans.hpp"

namespace mmfhe {

/// Learned parameters of a bank of p membership-mappings sharing inputs.
struct MembershipMappingModel {
  MatrixXd alpha;     // M x p, column j is alpha_j
  PointSet inducing;  // M x n
  KernelParams kernel;
  double nu = 2.1;
  double beta_inv = 0.0;

  Index m() const { return inducing.rows(); }
  Index input_dim() const { return inducing.cols(); }
  Index output_dim() const { return alpha.cols(); }
};

struct LearnConfig {
  double nu = 2.1;
  KMeansConfig kmeans;
  // Step by which M is reduced while tau <= 0.
  Index m_stride = 1;
  double fixed_point_tol = 1e-12;
  int fixed_point_max_iter = 500;
};

// ---------------------------------------------------------------------------
// tau

/// tr(K_xx) - tr(K_aa^{-1} K_xa^T K_xa), evaluated as
/// tr(K_xx) - ||L^{-1} K_xa^T||_F^2 with K_aa = L L^T.
inline double tau_numerator(const GramMatrices &g, const SpdFactor &kaa) {
  return g.k_xx.trace() - kaa.half_solve(g.k_xa.transpose()).squaredNorm();
}

inline double compute_tau(const GramMatrices &g, const SpdFactor &kaa,
                          double nu) {
  if (!(nu > 2.0)) throw InputError("compute_tau: nu must exceed 2");
  const double m = static_cast<double>(g.n_inducing());
  return tau_numerator(g, kaa) / (nu + m - 2.0);
}

/// tau = tr(K_xx - K_aa^{-1} K_xa^T K_xa) / (nu + M - 2). May be <= 0.
inline double compute_tau(const GramMatrices &g, double nu) {
  const double scale = g.k_aa.diagonal().maxCoeff();
  return compute_tau(g, factor_spd(g.k_aa, scale), nu);
}

/// tau is treated as positive only when its numerator clears the trace
/// deficit that jitter alone can produce (at most M * jitter) and a relative
/// rounding floor on tr(K_xx).
inline bool tau_is_positive(const GramMatrices &g, const SpdFactor &kaa) {
  const double num = tau_numerator(g, kaa);
  const double floor =
      std::max(1e-8 * g.k_xx.trace(),
               10.0 * static_cast<double>(g.n_inducing()) * kaa.jitter);
  return num > floor;
}

// ---------------------------------------------------------------------------
// SVD split of K_xa and the targets

/// Thin SVD K_xa = U1 S V^T with b1_j = U1^T y_j and
/// ||b2_j||^2 = ||y_j||^2 - ||b1_j||^2.
struct SvdSplit {
  MatrixXd u_thin;   // N x M
  VectorXd s;        // M, non-increasing
  MatrixXd v;        // M x M
  MatrixXd b1;       // M x p
  VectorXd b2_norm2; // p
  VectorXd y_norm2;  // p

  Index n_samples() const { return u_thin.rows(); }
  Index n_outputs() const { return b1.cols(); }

  static SvdSplit compute(const MatrixXd &k_xa, const MatrixXd &y) {
    if (y.rows() != k_xa.rows()) {
      throw InputError("SvdSplit: targets and K_xa row counts differ");
    }
    if (k_xa.cols() > k_xa.rows()) {
      throw InputError("SvdSplit: need M <= N");
    }
    Eigen::BDCSVD<MatrixXd> svd(k_xa, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdSplit out;
    out.u_thin = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
    out.b1 = out.u_thin.transpose() * y;
    out.y_norm2 = y.colwise().squaredNorm().transpose();
    out.b2_norm2 = (out.y_norm2 - out.b1.colwise().squaredNorm().transpose())
                       .cwiseMax(0.0);
    return out;
  }

  /// Split of sigma2 * K_xa: U, V and b are unchanged, S scales.
  SvdSplit scaled(double sigma2) const {
    SvdSplit out = *this;
    out.s *= sigma2;
    return out;
  }

  double pn() const {
    return static_cast<double>(n_outputs()) * static_cast<double>(n_samples());
  }
  /// beta^{-1}|_low = (1/pN) sum_j ||b2_j||^2.
  double lower() const { return b2_norm2.sum() / pn(); }
  /// beta^{-1}|_up = (1/pN) sum_j ||y_j||^2.
  double upper() const { return y_norm2.sum() / pn(); }
};

// ---------------------------------------------------------------------------
// sigma2 adjustment

/// sum_j (2||y_j||^2 - ||b2_j||^2) / (pN).
inline double convergence_threshold(const SvdSplit &split) {
  return (2.0 * split.y_norm2.sum() - split.b2_norm2.sum()) / split.pn();
}

/// Returns 1 when tau(sigma2 = 1) already exceeds the threshold, otherwise
/// 1.1 * threshold / tau_unit so that tau = sigma2 * tau_unit clears it with
/// a 10% margin.
inline double adjust_sigma(double tau_unit, double threshold) {
  if (!(tau_unit > 0.0)) {
    throw InputError("adjust_sigma: tau at sigma2 = 1 must be positive");
  }
  if (tau_unit > threshold) return 1.0;
  return 1.1 * threshold / tau_unit;
}

inline double adjust_sigma(double tau_unit, const MatrixXd &y,
                           const VectorXd &b2_norm2) {
  const double pn = static_cast<double>(y.rows()) * static_cast<double>(y.cols());
  const double q =
      (2.0 * y.colwise().squaredNorm().sum() - b2_norm2.sum()) / pn;
  return adjust_sigma(tau_unit, q);
}

namespace detail {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

/// Extended-precision solve of (K_xa^T K_xa + t K) alpha = K_xa^T y with
/// K = K_aa + jitter I = L L^T, through W = K_xa L^{-T}:
///   z = (W^T W + t I)^{-1} W^T y,  alpha = L^{-T} z.
/// W^T = L^{-1} K_xa^T for K_aa + jitter I = L L^T.
struct WeightedGram {
  LongMatrix wt;  // M x N
  Eigen::LLT<LongMatrix> kaa;

  WeightedGram(const GramMatrices &g, double jitter) {
    LongMatrix k = g.k_aa.cast<long double>();
    k.diagonal().array() += static_cast<long double>(jitter);
    kaa.compute(k);
    if (kaa.info() != Eigen::Success) {
      throw NumericError("K_aa factorization failed");
    }
    wt = kaa.matrixL().solve(LongMatrix(g.k_xa.transpose().cast<long double>()));
  }
};

struct RegularizedSolve {
  LongMatrix wt;     // W^T, M x N
  LongMatrix z;      // M x p
  LongMatrix alpha;  // M x p
  Eigen::LLT<LongMatrix> kaa;
};

inline RegularizedSolve regularized_solve(const GramMatrices &g, double jitter,
                                          double t, const MatrixXd &y) {
  if (!(t > 0.0)) throw NumericError("regularized solve: t must be positive");
  RegularizedSolve out;
  WeightedGram w(g, jitter);
  out.wt = std::move(w.wt);
  out.kaa = std::move(w.kaa);
  LongMatrix h = out.wt * out.wt.transpose();
  h.diagonal().array() += static_cast<long double>(t);
  const Eigen::LLT<LongMatrix> h_llt(h);
  if (h_llt.info() != Eigen::Success) {
    throw NumericError("regularized solve: system matrix not positive definite");
  }
  out.z = h_llt.solve(LongMatrix(out.wt * y.cast<long double>()));
  out.alpha = out.kaa.matrixU().solve(out.z);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Variance function R(beta^{-1})

/// R(b) = low + ((tau + b)^2 / pN) sum_j b1_j^T ((tau + b) I + A)^{-2} b1_j
/// with A = S V^T K_aa^{-1} V S. Writing W = K_xa L^{-T}, A is unitarily
/// similar to W^T W = Q diag(lambda) Q^T on the range of K_xa, which gives
///   R(b) = (1/pN) [sum_j ||y_j||^2 - sum_i c_i (2t + lambda_i) / (t + lambda_i)^2]
/// with t = tau + b and c_i = sum_j (Q^T W^T y_j)_i^2. This form has no small
/// divisors; the SVD split supplies the bounds low and up.
class VarianceFunction {
 public:
  VarianceFunction(const SvdSplit &split, const GramMatrices &g,
                   const SpdFactor &kaa, double tau, const MatrixXd &y)
      : tau_(tau), low_(split.lower()), up_(split.upper()), pn_(split.pn()),
        y_norm2_(split.y_norm2.sum()), b1_norm2_(split.b1.squaredNorm()) {
    if (y.rows() != g.n_samples()) {
      throw InputError("VarianceFunction: targets and K_xa row counts differ");
    }
    const detail::WeightedGram w(g, kaa.jitter);
    const MatrixXd wtw = (w.wt * w.wt.transpose()).cast<double>();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(wtw);
    if (eig.info() != Eigen::Success) {
      throw NumericError("VarianceFunction: eigendecomposition failed");
    }
    lambda_ = eig.eigenvalues().cwiseMax(0.0);
    const detail::LongMatrix proj = eig.eigenvectors().transpose().cast<long double>() *
                                    (w.wt * y.cast<long double>());
    energy_ = proj.rowwise().squaredNorm().cast<double>();
  }

  double operator()(double beta_inv) const {
    const double t = tau_ + beta_inv;
    double acc = 0.0;
    for (Index i = 0; i < lambda_.size(); ++i) {
      const double d = t + lambda_[i];
      acc += energy_[i] * (2.0 * t + lambda_[i]) / (d * d);
    }
    return (y_norm2_ - acc) / pn_;
  }

  /// Analytic dR/d(beta^{-1}) = (2/pN) sum_i c_i t / (t + lambda_i)^3.
  double derivative(double beta_inv) const {
    const double t = tau_ + beta_inv;
    double acc = 0.0;
    for (Index i = 0; i < lambda_.size(); ++i) {
      const double d = t + lambda_[i];
      acc += energy_[i] * t / (d * d * d);
    }
    return 2.0 * acc / pn_;
  }

  /// Upper bound (2/pN) sum_j ||b1_j||^2 / (tau + beta^{-1}) on dR.
  double derivative_bound(double beta_inv) const {
    return 2.0 * b1_norm2_ / (pn_ * (tau_ + beta_inv));
  }

  double tau() const { return tau_; }
  double lower() const { return low_; }
  double upper() const { return up_; }

 private:
  double tau_;
  double low_;
  double up_;
  double pn_;
  double y_norm2_;
  double b1_norm2_;
  VectorXd lambda_;
  VectorXd energy_;
};

inline double variance_function(double beta_inv, const SvdSplit &split,
                                const GramMatrices &g, double tau,
                                const MatrixXd &y) {
  const SpdFactor kaa = factor_spd(g.k_aa, g.k_aa.diagonal().maxCoeff());
  return VarianceFunction(split, g, kaa, tau, y)(beta_inv);
}

// ---------------------------------------------------------------------------
// Fixed point

struct FixedPointResult {
  double beta_inv = 0.0;
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> iterates;  // beta^{-1}|_0, beta^{-1}|_1, ...
};

/// Iterates b <- R(b) from `start` until |R(b) - b| <= tol * max(1, b).
inline FixedPointResult fixed_point_solve(const VarianceFunction &r,
                                          double start, double tol = 1e-12,
                                          int max_iter = 500) {
  FixedPointResult out;
  double b = start;
  for (int it = 0; it <= max_iter; ++it) {
    out.iterates.push_back(b);
    const double next = r(b);
    const double res = std::abs(next - b);
    if (res <= tol * std::max(1.0, b)) {
      out.beta_inv = b;
      out.residual = res;
      out.iterations = it;
      return out;
    }
    b = next;
  }
  throw ConvergenceError("fixed_point_solve: no convergence in " +
                         std::to_string(max_iter) + " iterations");
}

/// Starts from the midpoint of (beta^{-1}|_low, beta^{-1}|_up).
inline FixedPointResult fixed_point_solve(const VarianceFunction &r,
                                          const LearnConfig &cfg = {}) {
  return fixed_point_solve(r, 0.5 * (r.lower() + r.upper()),
                           cfg.fixed_point_tol, cfg.fixed_point_max_iter);
}

inline double fixed_point_solve(const SvdSplit &split, const GramMatrices &g,
                                double tau, const MatrixXd &y) {
  const SpdFactor kaa = factor_spd(g.k_aa, g.k_aa.diagonal().maxCoeff());
  return fixed_point_solve(VarianceFunction(split, g, kaa, tau, y)).beta_inv;
}

// ---------------------------------------------------------------------------
// alpha


/// Column j: (K_xa^T K_xa + (tau + beta^{-1}) K_aa)^{-1} K_xa^T y_j, with K_aa
/// the jittered matrix factored in `kaa`.
inline MatrixXd compute_alpha(double beta_inv, const GramMatrices &g,
                              const SpdFactor &kaa, double tau,
                              const MatrixXd &y) {
  if (!(beta_inv >= 0.0)) throw InputError("compute_alpha: beta_inv < 0");
  if (y.rows() != g.n_samples()) {
    throw InputError("compute_alpha: targets and K_xa row counts differ");
  }
  return detail::regularized_solve(g, kaa.jitter, tau + beta_inv, y)
      .alpha.cast<double>();
}

inline MatrixXd compute_alpha(double beta_inv, const GramMatrices &g,
                              double tau, const MatrixXd &y) {
  return compute_alpha(beta_inv, g, factor_spd(g.k_aa, g.k_aa.diagonal().maxCoeff()),
                       tau, y);
}

// ---------------------------------------------------------------------------
// Prediction

template <typename A>
VectorXd predict(const Eigen::MatrixBase<A> &x,
                 const MembershipMappingModel &model) {
  return (g_vector(x, model.inducing, model.kernel) * model.alpha).transpose();
}

/// Row i is the prediction for x.row(i).
inline MatrixXd predict_batch(const PointSet &x,
                              const MembershipMappingModel &model) {
  return gram(x, model.inducing, model.kernel) * model.alpha;
}

// ---------------------------------------------------------------------------
// Learning

/// Largest M <= m_max (stepping down by cfg.m_stride, re-clustering each
/// time) with tau(M, sigma2 = 1) > 0.
inline std::pair<Index, PointSet> reduce_m_until_tau_positive(
    const PointSet &x, Index m_max, [[maybe_unused]] double nu,
    const VectorXd &weights, const LearnConfig &cfg = {}) {
  if (m_max < 1 || m_max > x.rows()) {
    throw InputError("reduce_m: need 1 <= m_max <= N");
  }
  const KernelParams unit{1.0, weights};
  const Index stride = std::max<Index>(1, cfg.m_stride);
  for (Index m = m_max;; m = std::max<Index>(1, m - stride)) {
    PointSet a = select_inducing_points(x, m, cfg.kmeans);
    const GramMatrices g = GramMatrices::build(x, a, unit);
    const SpdFactor f = factor_spd(g.k_aa, 1.0);
    // nu > 2 only rescales tau by a positive factor.
    if (tau_is_positive(g, f)) return {m, std::move(a)};
    if (m == 1) throw LearnError("tau nonpositive at M=1");
  }
}

struct LearnDiagnostics {
  Index m_max = 0;
  Index m = 0;
  double tau_unit = 0.0;
  double tau = 0.0;
  double sigma2 = 1.0;
  double lower = 0.0;
  double upper = 0.0;
  double threshold = 0.0;
  FixedPointResult fixed_point;
};

struct LearnResult {
  MembershipMappingModel model;
  LearnDiagnostics diagnostics;
};

inline LearnResult learn_with_diagnostics(const PointSet &x, const MatrixXd &y,
                                          Index m_max,
                                          const LearnConfig &cfg = {}) {
  if (x.rows() < 2) throw InputError("learn: need N >= 2");
  if (y.rows() != x.rows()) throw InputError("learn: x and y row counts differ");
  if (y.cols() < 1 || x.cols() < 1) throw InputError("learn: empty dimension");
  if (!(cfg.nu > 2.0)) throw InputError("learn: nu must exceed 2");

  LearnResult out;
  LearnDiagnostics &d = out.diagnostics;
  d.m_max = m_max;

  const VectorXd w = default_weights(x);
  auto [m, inducing] = reduce_m_until_tau_positive(x, m_max, cfg.nu, w, cfg);
  d.m = m;

  const GramMatrices unit = GramMatrices::build(x, inducing, {1.0, w});
  const SpdFactor unit_kaa = factor_spd(unit.k_aa, 1.0);
  d.tau_unit = compute_tau(unit, unit_kaa, cfg.nu);
  const SvdSplit unit_split = SvdSplit::compute(unit.k_xa, y);
  d.threshold = convergence_threshold(unit_split);
  d.sigma2 = adjust_sigma(d.tau_unit, d.threshold);

  const KernelParams params{d.sigma2, w};
  const GramMatrices g = GramMatrices::build(x, inducing, params);
  const SpdFactor kaa = factor_spd(g.k_aa, d.sigma2);
  d.tau = compute_tau(g, kaa, cfg.nu);
  const SvdSplit split = unit_split.scaled(d.sigma2);
  d.lower = split.lower();
  d.upper = split.upper();

  const VarianceFunction r(split, g, kaa, d.tau, y);
  d.fixed_point = fixed_point_solve(r, cfg);

  MembershipMappingModel &model = out.model;
  model.inducing = std::move(inducing);
  model.kernel = params;
  model.nu = cfg.nu;
  model.beta_inv = d.fixed_point.beta_inv;
  model.alpha = compute_alpha(model.beta_inv, g, kaa, d.tau, y);
  return out;
}

/// Globally convergent variational learning of p membership-mappings
/// y^i ~ [F_1(x^i) ... F_p(x^i)].
inline MembershipMappingModel learn(const PointSet &x, const MatrixXd &y,
                                    Index m_max, const LearnConfig &cfg = {}) {
  return learn_with_diagnostics(x, y, m_max, cfg).model;
}

// ---------------------------------------------------------------------------
// Robustness

/// delta_m per output j: the perturbation radius for which alpha_j solves the
/// worst-case residual min-max problem. std::nullopt where y_j = 0.
inline std::vector<std::optional<double>> robustness_bound(
    const MembershipMappingModel &model, const GramMatrices &g,
    const MatrixXd &y) {
  if (y.rows() != g.n_samples() || y.cols() != model.output_dim()) {
    throw InputError("robustness_bound: target shape mismatch");
  }
  const SpdFactor kaa = factor_spd(g.k_aa, model.kernel.sigma2);
  const double tau = compute_tau(g, kaa, model.nu);
  const double t = tau + model.beta_inv;

  // (t I_N + W W^T)^{-1} y = (y - W (t I_M + W^T W)^{-1} W^T y) / t with
  // W = K_xa L^{-T}.
  const auto sol = detail::regularized_solve(g, kaa.jitter, t, y);
  const detail::LongMatrix resolvent_y =
      (y.cast<long double>() - sol.wt.transpose() * sol.z) / static_cast<long double>(t);
  const detail::LongMatrix alpha_l = model.alpha.cast<long double>();
  const detail::LongMatrix lt_alpha = sol.kaa.matrixU() * alpha_l;

  std::vector<std::optional<double>> out;
  out.reserve(static_cast<std::size_t>(y.cols()));
  for (Index j = 0; j < y.cols(); ++j) {
    const double den = static_cast<double>(resolvent_y.col(j).norm());
    if (!(den > 0.0)) {
      out.emplace_back(std::nullopt);
      continue;
    }
    const double quad = static_cast<double>(lt_alpha.col(j).squaredNorm());
    out.emplace_back(std::sqrt(1.0 + quad) / den);
  }
  return out;
}

}  // namespace mmfhe

#endif  // MMFHE_MEMBERSHIP_MAPPING_HPP_
