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

#ifndef MMFHE_CDMMA_HPP_
#define MMFHE_CDMMA_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "mmfhe/errors.hpp"
#include "mmfhe/kmeans.hpp"
#include "mmfhe/membership_mapping.hpp"

namespace mmfhe {

/// Conditionally deep membership-mapping autoencoder: layer l maps
/// x^l = P^l y (l = 1) or P^l yhat^{l-1} (l > 1) back to y.
struct CdmmaModel {
  std::vector<MembershipMappingModel> layers;
  std::vector<MatrixXd> projections;  // n_l x p

  Index n_layers() const { return static_cast<Index>(layers.size()); }
  Index data_dim() const { return projections.front().cols(); }
};

/// Parallel bank of CDMMAs, one per k-means part of the training data.
struct WideCdmmaModel {
  std::vector<CdmmaModel> submodels;

  Index size() const { return static_cast<Index>(submodels.size()); }
  Index data_dim() const { return submodels.front().data_dim(); }
};

// ---------------------------------------------------------------------------
// PCA

/// Eigenvectors of the sample covariance of Y (rows are samples), ordered by
/// decreasing eigenvalue. Each vector is signed so that its largest-magnitude
/// component (first one on ties) is positive.
class PcaBasis {
 public:
  explicit PcaBasis(const MatrixXd &y) {
    if (y.rows() < 2) throw InputError("pca: need at least 2 samples");
    const MatrixXd centered = y.rowwise() - y.colwise().mean();
    const MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(y.rows() - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
      throw NumericError("pca: eigendecomposition failed");
    }
    const Index p = y.cols();
    basis_.resize(p, p);
    eigenvalues_.resize(p);
    for (Index i = 0; i < p; ++i) {
      // SelfAdjointEigenSolver sorts ascending.
      VectorXd v = eig.eigenvectors().col(p - 1 - i);
      Index arg = 0;
      double best = -1.0;
      for (Index k = 0; k < p; ++k) {
        if (std::abs(v[k]) > best) {
          best = std::abs(v[k]);
          arg = k;
        }
      }
      if (v[arg] < 0.0) v = -v;
      basis_.row(i) = v.transpose();
      eigenvalues_[i] = eig.eigenvalues()[p - 1 - i];
    }
  }

  /// Top n_l rows.
  MatrixXd projection(Index n_l) const {
    if (n_l < 1 || n_l > basis_.rows()) {
      throw InputError("pca: need 1 <= n_l <= p");
    }
    return basis_.topRows(n_l);
  }

  const VectorXd &eigenvalues() const { return eigenvalues_; }

 private:
  MatrixXd basis_;
  VectorXd eigenvalues_;
};

inline MatrixXd pca_projection(const MatrixXd &y, Index n_l) {
  return PcaBasis(y).projection(n_l);
}

// ---------------------------------------------------------------------------
// CDMMA

inline Index layer_dim(Index n, Index l) {
  return std::max<Index>(n - l + 1, 1);
}

/// Trains L layers. M_max of layer l > 1 is the M that layer l - 1 settled on.
/// Every P^l is taken from the covariance of the original Y.
inline CdmmaModel learn_cdmma(const MatrixXd &y, Index n, Index m_max,
                              Index l_count, const LearnConfig &cfg = {},
                              std::vector<LearnDiagnostics> *diag = nullptr) {
  if (n < 1 || n > y.cols()) throw InputError("learn_cdmma: need 1 <= n <= p");
  if (l_count < 1) throw InputError("learn_cdmma: need L >= 1");
  if (m_max < 1 || m_max > y.rows()) {
    throw InputError("learn_cdmma: need 1 <= m_max <= N");
  }
  const PcaBasis basis(y);
  CdmmaModel out;
  MatrixXd prev_out;
  Index layer_m_max = m_max;
  for (Index l = 1; l <= l_count; ++l) {
    MatrixXd p = basis.projection(layer_dim(n, l));
    const MatrixXd x = (l == 1 ? y : prev_out) * p.transpose();
    LearnResult r = learn_with_diagnostics(x, y, layer_m_max, cfg);
    if (diag != nullptr) diag->push_back(r.diagnostics);
    prev_out = predict_batch(x, r.model);
    layer_m_max = r.model.m();
    out.layers.push_back(std::move(r.model));
    out.projections.push_back(std::move(p));
  }
  return out;
}

struct FilterResult {
  VectorXd output;
  Index index = 1;  // 1-based winning layer or submodel
  double error2 = 0.0;
};

/// Output of the layer whose reconstruction is closest to y (smallest
/// layer on ties).
inline FilterResult cdmma_filter(const VectorXd &y, const CdmmaModel &model) {
  if (y.size() != model.data_dim()) {
    throw InputError("cdmma_filter: dimension mismatch");
  }
  FilterResult best;
  best.error2 = std::numeric_limits<double>::infinity();
  VectorXd prev;
  for (Index l = 0; l < model.n_layers(); ++l) {
    const VectorXd x = model.projections[l] * (l == 0 ? y : prev);
    VectorXd out = predict(x, model.layers[l]);
    const double e = (y - out).squaredNorm();
    if (e < best.error2) {
      best.error2 = e;
      best.index = l + 1;
      best.output = out;
    }
    prev = std::move(out);
  }
  return best;
}

/// Every layer's output for y, in layer order.
inline std::vector<VectorXd> cdmma_layer_outputs(const VectorXd &y,
                                                 const CdmmaModel &model) {
  std::vector<VectorXd> outs;
  VectorXd prev;
  for (Index l = 0; l < model.n_layers(); ++l) {
    const VectorXd x = model.projections[l] * (l == 0 ? y : prev);
    prev = predict(x, model.layers[l]);
    outs.push_back(prev);
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Wide CDMMA

struct WideCdmmaConfig {
  Index l_count = 5;
  Index n = 20;
  std::vector<double> r_grid{0.5};
  Index part_size = 1000;
  LearnConfig learn;
};

/// k-means partition into S = ceil(N / part_size) parts. Parts with fewer
/// than two points are folded into the part with the nearest centroid.
inline std::vector<std::vector<Index>> partition_parts(
    const MatrixXd &y, Index part_size, const KMeansConfig &kcfg) {
  const Index n = y.rows();
  const Index s = (n + part_size - 1) / part_size;
  std::vector<std::vector<Index>> parts(static_cast<std::size_t>(s));
  if (s == 1) {
    for (Index i = 0; i < n; ++i) parts[0].push_back(i);
    return parts;
  }
  const KMeansResult km = kmeans(y, s, kcfg);
  for (Index i = 0; i < n; ++i) parts[km.labels[i]].push_back(i);

  std::vector<bool> alive(parts.size(), true);
  for (std::size_t c = 0; c < parts.size(); ++c) {
    if (parts[c].size() >= 2) continue;
    std::size_t target = c;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < parts.size(); ++o) {
      if (o == c || !alive[o] || parts[o].size() < 2) continue;
      const double d = (km.centroids.row(static_cast<Index>(c)) -
                        km.centroids.row(static_cast<Index>(o)))
                           .squaredNorm();
      if (d < best) {
        best = d;
        target = o;
      }
    }
    if (target == c) continue;  // nothing viable to merge into
    parts[target].insert(parts[target].end(), parts[c].begin(), parts[c].end());
    std::sort(parts[target].begin(), parts[target].end());
    parts[c].clear();
    alive[c] = false;
  }
  std::vector<std::vector<Index>> out;
  for (auto &p : parts) {
    if (!p.empty()) out.push_back(std::move(p));
  }
  return out;
}

inline Index m_max_for(double r, Index part_n) {
  const auto m = static_cast<Index>(std::floor(r * static_cast<double>(part_n)));
  return std::clamp<Index>(m, 1, part_n);
}

inline MatrixXd select_rows(const MatrixXd &y, const std::vector<Index> &idx) {
  MatrixXd out(static_cast<Index>(idx.size()), y.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Index>(i)) = y.row(idx[i]);
  }
  return out;
}

/// Per part, single-layer probes over r_grid pick the r with the largest
/// precision (smallest beta^{-1}); an L-layer CDMMA is then trained with
/// M_max = r * part size.
inline WideCdmmaModel learn_wide_cdmma(const MatrixXd &y,
                                       const WideCdmmaConfig &cfg) {
  if (cfg.r_grid.empty()) throw InputError("learn_wide_cdmma: empty r grid");
  for (std::size_t i = 0; i < cfg.r_grid.size(); ++i) {
    const double r = cfg.r_grid[i];
    if (!(r > 0.0 && r <= 1.0) || (i > 0 && !(r > cfg.r_grid[i - 1]))) {
      throw InputError("learn_wide_cdmma: r grid must increase within (0,1]");
    }
  }
  if (y.rows() < 2) throw InputError("learn_wide_cdmma: need N >= 2");

  WideCdmmaModel out;
  for (const auto &idx :
       partition_parts(y, cfg.part_size, cfg.learn.kmeans)) {
    const MatrixXd part = select_rows(y, idx);
    const Index part_n = part.rows();
    double r_best = cfg.r_grid.front();
    if (cfg.r_grid.size() > 1) {
      double best_beta_inv = std::numeric_limits<double>::infinity();
      for (double r : cfg.r_grid) {
        const CdmmaModel probe =
            learn_cdmma(part, cfg.n, m_max_for(r, part_n), 1, cfg.learn);
        const double b = probe.layers.front().beta_inv;
        if (b < best_beta_inv) {
          best_beta_inv = b;
          r_best = r;
        }
      }
    }
    out.submodels.push_back(learn_cdmma(part, cfg.n, m_max_for(r_best, part_n),
                                        cfg.l_count, cfg.learn));
  }
  return out;
}

/// Output of the submodel whose CDMMA reconstruction is closest to y
/// (smallest index on ties).
inline FilterResult wide_filter(const VectorXd &y, const WideCdmmaModel &model) {
  FilterResult best;
  best.error2 = std::numeric_limits<double>::infinity();
  for (Index s = 0; s < model.size(); ++s) {
    FilterResult r = cdmma_filter(y, model.submodels[s]);
    if (r.error2 < best.error2) {
      best = std::move(r);
      best.index = s + 1;
    }
  }
  return best;
}

}  // namespace mmfhe

#endif  // MMFHE_CDMMA_HPP_
