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

#ifndef MMFHE_EXPERIMENT_HPP_
#define MMFHE_EXPERIMENT_HPP_

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <future>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mmfhe/archive.hpp"
#include "mmfhe/dataset.hpp"
#include "mmfhe/fuzzy.hpp"
#include "mmfhe/gates.hpp"
#include "mmfhe/protocol.hpp"

namespace mmfhe {

// ---------------------------------------------------------------------------
// Training

/// One wide CDMMA per class present in `part`, trained with up to `workers`
/// classes in flight.
inline PartyArchive train_party(const Dataset &part, const TrainHyper &hyper,
                                unsigned workers = 0) {
  hyper.membership.validate();
  const std::vector<int> labels = distinct_labels(part);
  if (labels.empty()) throw InputError("train_party: empty partition");
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

  PartyArchive out;
  out.hyper = hyper;
  out.attributes.resize(labels.size());
  out.class_counts.resize(labels.size());
  const WideCdmmaConfig cfg = hyper.wide_config();

  std::vector<std::future<void>> pending;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (pending.size() >= workers) {
      pending.front().get();
      pending.erase(pending.begin());
    }
    pending.push_back(std::async(std::launch::async, [&, c] {
      const MatrixXd rows = class_rows(part, labels[c]);
      if (rows.rows() < 2) {
        throw InputError("train_party: class " + std::to_string(labels[c]) +
                         " has fewer than two samples");
      }
      out.attributes[c] = {learn_wide_cdmma(rows, cfg), hyper.membership, labels[c]};
      out.class_counts[c] = rows.rows();
    }));
  }
  for (auto &f : pending) f.get();
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

using BankPtr = std::shared_ptr<const AttributeBank>;

/// scores[i][k]: party k's local winner for test row i.
inline std::vector<std::vector<LocalScore>> score_parties(const std::vector<BankPtr> &banks,
                                                          const MatrixXd &x) {
  std::vector<std::vector<LocalScore>> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    const VectorXd y = x.row(i).transpose();
    for (const auto &b : banks) out[static_cast<std::size_t>(i)].push_back(local_classify(y, *b));
  }
  return out;
}

/// Global label after n_b-bit quantization of every mu_bar; the plaintext
/// reference for the encrypted path.
inline int global_classify_quantized(const std::vector<LocalScore> &scores, int n_b) {
  std::vector<std::uint64_t> codes;
  for (const auto &s : scores) codes.push_back(fhe::encode_unit_interval(std::clamp(s.mu_bar, 0.0, 1.0), n_b));
  return scores[fhe::plain_argmin(codes)].label;
}

// ---------------------------------------------------------------------------
// Reports

enum class EvalMode { plain, encrypted };

inline EvalMode eval_mode_from_string(const std::string &s) {
  if (s == "plain") return EvalMode::plain;
  if (s == "encrypted") return EvalMode::encrypted;
  throw InputError("unknown mode: " + s);
}

struct ClassTally {
  Index total = 0;
  Index correct = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct ExperimentReport {
  EvalMode mode = EvalMode::plain;
  int n_b = 0;  // 0 for unquantized plain evaluation
  int parties = 0;
  ClassTally overall;
  std::map<int, ClassTally> per_class;
  std::map<std::string, double> wall_seconds;  // per stage
  fhe::GateTally gates;
  double simulated_seconds = 0.0;
  std::vector<int> predictions;

  double accuracy() const { return overall.accuracy(); }
};

inline const char *to_string(EvalMode m) { return m == EvalMode::plain ? "plain" : "encrypted"; }

struct EvalOptions {
  EvalMode mode = EvalMode::plain;
  int n_b = 0;  // plain mode: 0 keeps raw scores, 8/16 quantizes
  std::uint64_t seed = 1;
  Index limit = 0;  // 0 evaluates every row
};

inline ExperimentReport evaluate(const std::vector<BankPtr> &banks, const Dataset &test,
                                 const EvalOptions &opt) {
  if (banks.empty()) throw InputError("evaluate: no parties");
  if (opt.mode == EvalMode::encrypted && opt.n_b != 8 && opt.n_b != 16) {
    throw InputError("evaluate: encrypted mode needs n_b of 8 or 16");
  }
  if (opt.mode == EvalMode::plain && opt.n_b != 0 && opt.n_b != 8 && opt.n_b != 16) {
    throw InputError("evaluate: n_b must be 0, 8 or 16");
  }
  for (const auto &b : banks) {
    if (!b || b->empty() || b->front().data_dim() != test.dim()) {
      throw InputError("evaluate: party models do not match the test dimension");
    }
  }
  const Index n = opt.limit > 0 ? std::min(opt.limit, test.size()) : test.size();

  ExperimentReport rep;
  rep.mode = opt.mode;
  rep.n_b = opt.n_b;
  rep.parties = static_cast<int>(banks.size());
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  if (opt.mode == EvalMode::plain) {
    for (Index i = 0; i < n; ++i) {
      std::vector<LocalScore> s;
      const VectorXd y = test.features.row(i).transpose();
      for (const auto &b : banks) s.push_back(local_classify(y, *b));
      rep.predictions.push_back(opt.n_b == 0 ? global_classify_scores(s)
                                             : global_classify_quantized(s, opt.n_b));
    }
    rep.wall_seconds["classify"] =
        std::chrono::duration<double>(Clock::now() - t0).count();
  } else {
    proto::LocalDeployment dep(banks);
    std::mt19937_64 rng(opt.seed);
    for (Index i = 0; i < n; ++i) {
      const auto keys = fhe::PlainSimBackend::keygen(rng());
      const auto r = dep.query(test.features.row(i).transpose(), opt.n_b, keys);
      rep.predictions.push_back(r.label);
      rep.gates += r.gates;
      rep.simulated_seconds += r.simulated_seconds;
    }
    rep.wall_seconds["encrypted_queries"] =
        std::chrono::duration<double>(Clock::now() - t0).count();
  }

  for (Index i = 0; i < n; ++i) {
    const int truth = test.labels[static_cast<std::size_t>(i)];
    const bool ok = rep.predictions[static_cast<std::size_t>(i)] == truth;
    auto &c = rep.per_class[truth];
    ++c.total;
    ++rep.overall.total;
    if (ok) {
      ++c.correct;
      ++rep.overall.correct;
    }
  }
  return rep;
}

inline nlohmann::json report_json(const ExperimentReport &r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto &[label, t] : r.per_class) {
    per_class.push_back({{"label", label}, {"total", t.total}, {"correct", t.correct},
                         {"accuracy", t.accuracy()}});
  }
  return {{"mode", to_string(r.mode)},
          {"n_b", r.n_b},
          {"parties", r.parties},
          {"total", r.overall.total},
          {"correct", r.overall.correct},
          {"accuracy", r.accuracy()},
          {"per_class", per_class},
          {"wall_seconds", r.wall_seconds},
          {"gates", proto::gate_json(r.gates)},
          {"bootstrapped_gates", r.gates.bootstrapped()},
          {"simulated_seconds", r.simulated_seconds}};
}

/// Human table followed by machine-readable `row,` lines.
inline void print_report(std::ostream &os, const ExperimentReport &r) {
  char line[160];
  std::snprintf(line, sizeof line, "mode %s  n_b %d  parties %d\n", to_string(r.mode),
                r.n_b, r.parties);
  os << line;
  os << "class    total  correct  accuracy\n";
  for (const auto &[label, t] : r.per_class) {
    std::snprintf(line, sizeof line, "%5d  %7lld  %7lld  %8.4f\n", label,
                  static_cast<long long>(t.total), static_cast<long long>(t.correct),
                  t.accuracy());
    os << line;
  }
  std::snprintf(line, sizeof line, "  all  %7lld  %7lld  %8.4f\n",
                static_cast<long long>(r.overall.total),
                static_cast<long long>(r.overall.correct), r.accuracy());
  os << line;
  for (const auto &[stage, s] : r.wall_seconds) {
    std::snprintf(line, sizeof line, "wall %s: %.3f s\n", stage.c_str(), s);
    os << line;
  }
  if (r.mode == EvalMode::encrypted) {
    std::snprintf(line, sizeof line,
                  "cloud gates: %llu bootstrapped, %llu not; simulated %.3f s "
                  "(%.3f s per query)\n",
                  static_cast<unsigned long long>(r.gates.bootstrapped()),
                  static_cast<unsigned long long>(r.gates[fhe::Gate::kNot]),
                  r.simulated_seconds,
                  r.overall.total ? r.simulated_seconds / static_cast<double>(r.overall.total) : 0.0);
    os << line;
  }
  os << "row,mode,n_b,label,total,correct,accuracy\n";
  for (const auto &[label, t] : r.per_class) {
    os << "row," << to_string(r.mode) << ',' << r.n_b << ',' << label << ',' << t.total << ','
       << t.correct << ',' << t.accuracy() << '\n';
  }
  os << "row," << to_string(r.mode) << ',' << r.n_b << ",all," << r.overall.total << ','
     << r.overall.correct << ',' << r.accuracy() << '\n';
}

// ---------------------------------------------------------------------------
// Scalability sweep

struct SweepRow {
  int k = 0;
  fhe::GateTally gates;
  double simulated_seconds = 0.0;
  double seconds_per_party() const { return simulated_seconds / k; }
};

struct AffineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line through (x_i, y_i).
inline AffineFit fit_affine(const std::vector<double> &x, const std::vector<double> &y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("fit_affine: need two points");
  Eigen::MatrixXd a(static_cast<Index>(x.size()), 2);
  Eigen::VectorXd b(static_cast<Index>(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    a(static_cast<Index>(i), 0) = x[i];
    a(static_cast<Index>(i), 1) = 1.0;
    b[static_cast<Index>(i)] = y[i];
  }
  const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
  const double ss_res = (a * c - b).squaredNorm();
  const double ss_tot = (b.array() - b.mean()).matrix().squaredNorm();
  return {c[0], c[1], ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0};
}

/// Cloud cost of the argmin for K synthetic parties with random scores.
inline std::vector<SweepRow> sweep_k(const std::vector<int> &k_list, int n_b,
                                     const fhe::LatencyModel &latency = {},
                                     std::uint64_t seed = 7) {
  std::vector<SweepRow> rows;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k : k_list) {
    if (k < 1) throw InputError("sweep_k: K must be positive");
    const auto keys = fhe::PlainSimBackend::keygen(rng());
    std::vector<proto::Word> words;
    for (int p = 0; p < k; ++p) words.push_back(fhe::encrypt_word(unit(rng), n_b, keys.cloud));
    const auto ev = proto::evaluate_scores(keys.cloud, words, latency);
    rows.push_back({k, ev.gates, ev.simulated_seconds});
  }
  return rows;
}

inline AffineFit fit_sweep(const std::vector<SweepRow> &rows) {
  std::vector<double> x, y;
  for (const auto &r : rows) {
    x.push_back(r.k);
    y.push_back(static_cast<double>(r.gates.total()));
  }
  return fit_affine(x, y);
}

/// Simulated seconds against K; the slope is the marginal time per party.
inline AffineFit fit_sweep_seconds(const std::vector<SweepRow> &rows) {
  std::vector<double> x, y;
  for (const auto &r : rows) {
    x.push_back(r.k);
    y.push_back(r.simulated_seconds);
  }
  return fit_affine(x, y);
}

inline void print_sweep(std::ostream &os, const std::vector<SweepRow> &rows, int n_b) {
  char line[160];
  os << "    K   gates(boot)   gates(not)   simulated s   s per party\n";
  for (const auto &r : rows) {
    std::snprintf(line, sizeof line, "%5d  %12llu  %11llu  %12.3f  %12.4f\n", r.k,
                  static_cast<unsigned long long>(r.gates.bootstrapped()),
                  static_cast<unsigned long long>(r.gates[fhe::Gate::kNot]),
                  r.simulated_seconds, r.seconds_per_party());
    os << line;
  }
  if (rows.size() >= 2) {
    const AffineFit f = fit_sweep(rows);
    std::snprintf(line, sizeof line, "affine fit: gates = %.3f K + %.3f, R^2 = %.9f\n",
                  f.slope, f.intercept, f.r2);
    os << line;
    std::snprintf(line, sizeof line, "marginal simulated time per party: %.4f s\n",
                  fit_sweep_seconds(rows).slope);
    os << line;
  }
  os << "row,n_b,k,gates_total,gates_bootstrapped,simulated_seconds,seconds_per_party\n";
  for (const auto &r : rows) {
    os << "row," << n_b << ',' << r.k << ',' << r.gates.total() << ','
       << r.gates.bootstrapped() << ',' << r.simulated_seconds << ','
       << r.seconds_per_party() << '\n';
  }
}

}  // namespace mmfhe

#endif  // MMFHE_EXPERIMENT_HPP_
