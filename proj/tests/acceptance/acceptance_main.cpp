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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mmfhe/experiment.hpp"
#include "support/highprec.hpp"
#include "support/instances.hpp"

namespace {

using namespace mmfhe;
using testing::Instance;
using testing::make_instance;

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string &why) {
    if (pass) detail = why;
    pass = false;
  }
};

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<Instance> &instances() {
  static std::vector<Instance> v = [] {
    std::vector<Instance> out;
    for (std::uint64_t s = 0; s < 50; ++s) out.push_back(make_instance(9000 + s));
    return out;
  }();
  return v;
}

Outcome fixed_point() {
  Outcome o;
  int worst_iter = 0;
  double worst_bisect = 0.0;
  for (std::size_t i = 0; i < instances().size(); ++i) {
    const Instance &inst = instances()[i];
    const VarianceFunction r = inst.variance();
    FixedPointResult fp;
    try {
      fp = fixed_point_solve(r);
    } catch (const ConvergenceError &e) {
      o.fail("instance " + std::to_string(i) + ": " + e.what());
      continue;
    }
    worst_iter = std::max(worst_iter, fp.iterations);
    if (std::abs(r(fp.beta_inv) - fp.beta_inv) > 1e-12 * std::max(1.0, fp.beta_inv)) {
      o.fail("residual too large on instance " + std::to_string(i));
    }
    if (fp.iterations > 500) o.fail("too many iterations on instance " + std::to_string(i));
    if (!(fp.beta_inv > r.lower() && fp.beta_inv < r.upper())) {
      o.fail("estimate outside (low, up) on instance " + std::to_string(i));
    }
    const double gap = std::abs(fp.beta_inv - testing::bisect_fixed_point(r));
    worst_bisect = std::max(worst_bisect, gap);
    if (gap > 1e-8) o.fail("bisection disagrees on instance " + std::to_string(i));
  }
  if (o.pass) {
    o.detail = fmt("50 instances, max iterations %.0f, max |fixed point - bisection| %.2e",
                   worst_iter, worst_bisect);
  }
  return o;
}

Outcome monotone_with_bound() {
  Outcome o;
  double worst_slack = -1e300;
  for (std::size_t i = 0; i < instances().size(); ++i) {
    const VarianceFunction r = instances()[i].variance();
    double prev = -1e300;
    for (int g = 1; g <= 100; ++g) {
      const double b = r.lower() + (r.upper() - r.lower()) * g / 101.0;
      const double v = r(b);
      if (!(v > prev)) o.fail("not increasing on instance " + std::to_string(i));
      prev = v;
      const double h = 1e-6;
      const double fd = (r(b + h) - r(b - h)) / (2.0 * h);
      const double bound = r.derivative_bound(b);
      worst_slack = std::max(worst_slack, fd - bound);
      if (!(fd >= -1e-6 && fd <= bound + 1e-6)) {
        o.fail("derivative outside bound on instance " + std::to_string(i));
      }
    }
  }
  if (o.pass) o.detail = fmt("50 x 100 grid points, max (fd - bound) %.2e", worst_slack);
  return o;
}

Outcome beta_equals_residual() {
  Outcome o;
  double worst = 0.0;
  for (std::size_t i = 0; i < instances().size(); ++i) {
    const Instance &inst = instances()[i];
    const auto res = testing::hp::residual_norms(inst.g, inst.model().alpha, inst.y);
    const double mse = std::accumulate(res.begin(), res.end(), 0.0) /
                       static_cast<double>(inst.y.size());
    const double e = std::abs(mse - inst.model().beta_inv) / std::max(mse, 1e-300);
    worst = std::max(worst, e);
    if (e > 1e-9) o.fail(fmt("relative gap %.2e", e) + " on instance " + std::to_string(i));
  }
  if (o.pass) o.detail = fmt("50 instances, max relative gap %.2e", worst);
  return o;
}

Outcome robustness() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Instance inst = make_instance(9500 + s);
    const auto &m = inst.model();
    const auto delta = robustness_bound(m, inst.g, inst.y);
    const auto k = testing::hp::jittered_kaa(inst.g, inst.kaa);
    const auto res = testing::hp::residual_norms(inst.g, m.alpha, inst.y);
    for (Index j = 0; j < inst.y.cols(); ++j) {
      if (!delta[j]) {
        o.fail("no bound on instance " + std::to_string(s));
        continue;
      }
      const VectorXd a = m.alpha.col(j);
      const auto ah = testing::hp::lift(a);
      const double quad = static_cast<double>((ah.transpose() * k * ah)(0, 0));
      const double lam = *delta[j] * std::sqrt(res[j]) / std::sqrt(1.0 + quad);
      const VectorXd again =
          testing::hp::lower(testing::hp::alpha(inst.g, k, lam, inst.y.col(j)));
      const double e = (again - a).norm() / a.norm();
      worst = std::max(worst, e);
      if (e > 1e-8) o.fail(fmt("relative change %.2e", e) + " on instance " + std::to_string(s));
    }
  }
  if (o.pass) o.detail = fmt("20 instances, max relative change %.2e", worst);
  return o;
}

Outcome circuits() {
  Outcome o;
  auto keys = fhe::PlainSimBackend::keygen(2026);
  auto enc = [&](std::uint64_t v, int n_b) { return fhe::encrypt_integer(v, n_b, keys.secret); };
  auto &e = keys.cloud;
  for (std::uint64_t a = 0; a < 16; ++a) {
    for (std::uint64_t b = 0; b < 16; ++b) {
      const auto wa = enc(a, 4), wb = enc(b, 4);
      if (keys.secret.decrypt(fhe::circuit_less_than(e, wa, wb)) != (a < b) ||
          keys.secret.decrypt(fhe::circuit_equal(e, wa, wb)) != (a == b) ||
          fhe::decrypt_word(fhe::circuit_min(e, wa, wb), keys.secret) != std::min(a, b)) {
        o.fail("4-bit table wrong at " + std::to_string(a) + "," + std::to_string(b));
      }
    }
  }
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> k_dist(1, 8), coin(0, 3);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n_b = trial % 2 == 0 ? 8 : 16;
    const int k = k_dist(rng);
    const std::uint64_t top = coin(rng) == 0 ? 3 : (std::uint64_t{1} << n_b) - 1;
    std::uniform_int_distribution<std::uint64_t> v(0, top);
    std::vector<std::uint64_t> vals(static_cast<std::size_t>(k));
    std::vector<fhe::EncryptedWord<fhe::SimBit>> words;
    for (auto &x : vals) {
      x = v(rng);
      words.push_back(enc(x, n_b));
    }
    auto ev = keys.cloud.fork();
    const auto onehot = fhe::circuit_argmin_onehot(ev, words);
    std::size_t ones = 0, hot = 0;
    for (std::size_t i = 0; i < onehot.size(); ++i) {
      if (keys.secret.decrypt(onehot[i])) {
        ++ones;
        hot = i;
      }
    }
    if (ones != 1) o.fail("one-hot sum " + std::to_string(ones) + " in trial " + std::to_string(trial));
    if (hot != fhe::plain_argmin(vals)) o.fail("argmin mismatch in trial " + std::to_string(trial));
  }
  if (o.pass) o.detail = "4-bit lt/eq/min tables exact, 10000 random argmin instances exact";
  return o;
}

// MNIST banks shared by the end-to-end and accuracy criteria.
struct Mnist {
  std::vector<BankPtr> banks;
  Dataset test;
  std::vector<std::vector<LocalScore>> scores;
  double train_seconds = 0.0;
  Index train_rows = 0;
};

Mnist &mnist() {
  static Mnist m = [] {
    Mnist out;
    const std::string dir = MMFHE_DATA_DIR "/mnist-subset/";
    DatasetSpec train_spec;
    train_spec.idx_images = dir + "train-images-idx3-ubyte.gz";
    train_spec.idx_labels = dir + "train-labels-idx1-ubyte.gz";
    const Dataset train = ingest(train_spec);
    DatasetSpec test_spec;
    test_spec.idx_images = dir + "t10k-images-idx3-ubyte.gz";
    test_spec.idx_labels = dir + "t10k-labels-idx1-ubyte.gz";
    out.test = ingest(test_spec);
    out.train_rows = train.size();

    TrainHyper hyper;
    hyper.l_count = 5;
    hyper.n = 20;
    hyper.r_grid = {0.5};
    const auto t0 = std::chrono::steady_clock::now();
    for (const Dataset &part : partition(train, PartitionSpec{})) {
      out.banks.push_back(
          std::make_shared<const AttributeBank>(train_party(part, hyper).attributes));
    }
    out.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.scores = score_parties(out.banks, out.test.features);
    return out;
  }();
  return m;
}

Outcome end_to_end() {
  Outcome o;
  const Mnist &m = mnist();
  const Index queries = 500;
  std::size_t disagreements = 0;
  for (int n_b : {8, 16}) {
    EvalOptions opt;
    opt.mode = EvalMode::encrypted;
    opt.n_b = n_b;
    opt.limit = queries;
    const ExperimentReport enc = evaluate(m.banks, m.test, opt);
    for (Index i = 0; i < queries; ++i) {
      const auto &s = m.scores[static_cast<std::size_t>(i)];
      if (enc.predictions[static_cast<std::size_t>(i)] != global_classify_quantized(s, n_b)) {
        o.fail("encrypted label differs from quantized plain at query " + std::to_string(i));
      }
    }
    const double bin = std::ldexp(1.0, -n_b + 1);
    for (const auto &s : m.scores) {
      const int raw = global_classify_scores(s);
      if (raw == global_classify_quantized(s, n_b)) continue;
      ++disagreements;
      std::vector<std::uint64_t> codes;
      for (const auto &x : s) codes.push_back(fhe::encode_unit_interval(std::clamp(x.mu_bar, 0.0, 1.0), n_b));
      const double closest =
          std::abs(s[winning_party(s)].mu_bar - s[fhe::plain_argmin(codes)].mu_bar);
      if (!(closest < bin)) o.fail(fmt("raw/quantized disagreement with gap %.3e", closest));
    }
  }
  if (o.pass) {
    o.detail = fmt("%.0f encrypted queries at each of 8 and 16 bits match, "
                   "%.0f raw-vs-quantized disagreements inside the bin bound",
                   static_cast<double>(queries), static_cast<double>(disagreements));
  }
  return o;
}

Outcome mnist_accuracy() {
  Outcome o;
  const Mnist &m = mnist();
  auto accuracy = [&](int n_b) {
    Index correct = 0;
    for (std::size_t i = 0; i < m.scores.size(); ++i) {
      correct += global_classify_quantized(m.scores[i], n_b) == m.test.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(m.scores.size());
  };
  const double a16 = accuracy(16), a8 = accuracy(8);
  if (!(a16 >= 0.90)) o.fail("");
  if (!(a16 >= a8 - 0.02)) o.fail("");
  o.detail = fmt("16-bit %.4f, 8-bit %.4f, ", a16, a8) +
             fmt("%.0f train rows, %.0f test rows, ", static_cast<double>(m.train_rows),
                 static_cast<double>(m.test.size())) +
             fmt("training %.0f s", m.train_seconds);
  return o;
}

Outcome scalability() {
  Outcome o;
  const auto rows = sweep_k({2, 10, 25, 50, 100}, 16);
  const AffineFit gates = fit_sweep(rows);
  const AffineFit seconds = fit_sweep_seconds(rows);
  if (!(gates.r2 > 0.999)) o.fail("");
  if (!(seconds.slope >= 1.5 && seconds.slope <= 6.0)) o.fail("");
  o.detail = fmt("gate fit R^2 %.6f, %.3f s per additional party at 16 bits, ", gates.r2,
                 seconds.slope) +
             fmt("%.3f s per party at K=100", rows.back().seconds_per_party());
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
      {"fixed-point convergence", fixed_point},
      {"variance function monotone with bounded slope", monotone_with_bound},
      {"converged estimate equals training residual", beta_equals_residual},
      {"robustness re-substitution", robustness},
      {"circuit correctness", circuits},
      {"encrypted equals quantized plaintext", end_to_end},
      {"MNIST two-party accuracy", mnist_accuracy},
      {"cloud cost scales affinely", scalability},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %zu %s: %s (%s; %.1f s)\n", i + 1, criteria[i].first,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
