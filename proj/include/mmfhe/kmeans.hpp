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

#ifndef MMFHE_KMEANS_HPP_
#define MMFHE_KMEANS_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "mmfhe/errors.hpp"

namespace mmfhe {

struct KMeansConfig {
  std::uint64_t seed = 0x5eed'1a2b'3c4d'5e6fULL;
  int max_iterations = 100;
};

struct KMeansResult {
  Eigen::MatrixXd centroids;        // k x n
  std::vector<Eigen::Index> labels;  // one per input row
  int iterations = 0;
};

namespace detail {

inline double sqdist(const Eigen::MatrixXd &a, Eigen::Index i,
                     const Eigen::MatrixXd &b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

inline Eigen::Index nearest(const Eigen::MatrixXd &x, Eigen::Index i,
                            const Eigen::MatrixXd &c, double *dist = nullptr) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    const double d = sqdist(x, i, c, j);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given seed.
/// A cluster that empties is re-seeded at the point farthest from its
/// current centroid.
inline KMeansResult kmeans(const Eigen::MatrixXd &x, Eigen::Index k,
                           const KMeansConfig &config = {}) {
  const Eigen::Index n = x.rows();
  if (k < 1) throw InputError("kmeans: k must be >= 1");
  if (k > n) throw InputError("kmeans: k exceeds number of points");

  std::mt19937_64 rng(config.seed);
  KMeansResult out;
  out.centroids.resize(k, x.cols());
  out.labels.assign(static_cast<std::size_t>(n), 0);

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  out.centroids.row(0) = x.row(first(rng));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = detail::sqdist(x, i, out.centroids, c - 1);
      if (d < d2[i]) d2[i] = d;
      total += d2[i];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = unit(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      // Guard against landing on an already chosen point through rounding.
      if (d2[pick] == 0.0) {
        for (Eigen::Index i = n - 1; i >= 0; --i) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      pick = first(rng);
    }
    out.centroids.row(c) = x.row(pick);
  }

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k));
  bool first_pass = true;
  for (out.iterations = 0; out.iterations < config.max_iterations;
       ++out.iterations) {
    bool changed = first_pass;
    first_pass = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lab = detail::nearest(x, i, out.centroids);
      if (lab != out.labels[i]) {
        out.labels[i] = lab;
        changed = true;
      }
    }
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(out.labels[i]) += x.row(i);
      ++counts[out.labels[i]];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        out.centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = detail::sqdist(x, i, out.centroids, out.labels[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      out.centroids.row(c) = x.row(far);
      out.labels[far] = c;
    }
  }
  // Final assignment consistent with the returned centroids.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.labels[i] = detail::nearest(x, i, out.centroids);
  }
  return out;
}

/// Inducing points a = cluster_centroid(x, m).
inline Eigen::MatrixXd select_inducing_points(const Eigen::MatrixXd &x,
                                              Eigen::Index m,
                                              const KMeansConfig &config = {}) {
  if (m < 1 || m > x.rows()) {
    throw InputError("select_inducing_points: need 1 <= m <= N");
  }
  return kmeans(x, m, config).centroids;
}

}  // namespace mmfhe

#endif  // MMFHE_KMEANS_HPP_
