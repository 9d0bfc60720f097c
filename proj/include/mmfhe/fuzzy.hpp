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

#ifndef MMFHE_FUZZY_HPP_
#define MMFHE_FUZZY_HPP_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mmfhe/cdmma.hpp"
#include "mmfhe/errors.hpp"

namespace mmfhe {

enum class MembershipKind { gaussian, student_t };

struct MembershipFunction {
  MembershipKind kind = MembershipKind::gaussian;
  double nu = 2.001;  // student_t only

  /// mu as a function of the squared reconstruction error e2 in R^p.
  double operator()(double e2, Index p) const {
    const double dp = static_cast<double>(p);
    if (kind == MembershipKind::gaussian) return std::exp(-e2 / (2.0 * dp));
    return std::pow(1.0 + e2 / (nu - 2.0), -0.5 * (nu + dp));
  }

  void validate() const {
    if (kind == MembershipKind::student_t && !(nu > 2.0)) {
      throw InputError("membership: student_t needs nu > 2");
    }
  }
};

inline const char *to_string(MembershipKind k) {
  return k == MembershipKind::gaussian ? "gaussian" : "student_t";
}

inline MembershipKind membership_kind_from_string(const std::string &s) {
  if (s == "gaussian") return MembershipKind::gaussian;
  if (s == "student_t" || s == "student-t") return MembershipKind::student_t;
  throw InputError("unknown membership kind: " + s);
}

/// Fuzzy attribute induced by a wide CDMMA trained on one class.
struct FuzzyAttribute {
  WideCdmmaModel model;
  MembershipFunction membership;
  int label = 1;  // class label reported when this attribute wins

  Index data_dim() const { return model.data_dim(); }
};

/// Degree in (0, 1] to which y matches the attribute.
inline double attribute_membership(const VectorXd &y,
                                   const FuzzyAttribute &attr) {
  if (y.size() != attr.data_dim()) {
    throw InputError("attribute_membership: dimension mismatch");
  }
  const FilterResult f = wide_filter(y, attr.model);
  return attr.membership(f.error2, y.size());
}

struct LocalScore {
  int label = 1;
  double mu_bar = 1.0;  // 1 - mu of the winning attribute
};

/// argmax_c mu_c over one party's attributes; ties go to the first.
inline LocalScore local_classify_memberships(std::span<const double> mu,
                                             std::span<const int> labels) {
  if (mu.empty()) throw InputError("local_classify: no attributes");
  std::size_t best = 0;
  for (std::size_t c = 1; c < mu.size(); ++c) {
    if (mu[c] > mu[best]) best = c;
  }
  return {labels[best], 1.0 - mu[best]};
}

inline LocalScore local_classify(const VectorXd &y,
                                 std::span<const FuzzyAttribute> attrs) {
  if (attrs.empty()) throw InputError("local_classify: no attributes");
  std::vector<double> mu;
  std::vector<int> labels;
  for (const auto &a : attrs) {
    mu.push_back(attribute_membership(y, a));
    labels.push_back(a.label);
  }
  return local_classify_memberships(mu, labels);
}

/// Index (0-based) of the party with the smallest mu_bar; ties to the first.
inline std::size_t winning_party(std::span<const LocalScore> scores) {
  if (scores.empty()) throw InputError("global_classify: no parties");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k].mu_bar < scores[best].mu_bar) best = k;
  }
  return best;
}

/// Two-stage form of the distributed rule base: each party reports its local
/// winner, the global label is that of the party with the smallest mu_bar.
inline int global_classify_scores(std::span<const LocalScore> scores) {
  return scores[winning_party(scores)].label;
}

using AttributeBank = std::vector<FuzzyAttribute>;

inline int global_classify_plain(const VectorXd &y,
                                 std::span<const AttributeBank> parties) {
  if (parties.empty()) throw InputError("global_classify: no parties");
  std::vector<LocalScore> scores;
  for (const auto &bank : parties) scores.push_back(local_classify(y, bank));
  return global_classify_scores(scores);
}

}  // namespace mmfhe

#endif  // MMFHE_FUZZY_HPP_
