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

// Command-line front end: training, evaluation, networked roles and sweeps.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mmfhe/archive.hpp"
#include "mmfhe/dataset.hpp"
#include "mmfhe/experiment.hpp"
#include "mmfhe/net.hpp"
#include "mmfhe/protocol.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;
constexpr int kExitConvergence = 3;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct DataFlags {
  mmfhe::DatasetSpec spec;
  std::string normalization = "divide255";
  std::string partition = "odd-even-digits";
  bool no_header = false;
  long long subsample = 0;

  void add(CLI::App &app, bool with_partition) {
    app.add_option("--images", spec.idx_images, "IDX image file (optionally gzipped)");
    app.add_option("--labels", spec.idx_labels, "IDX label file (optionally gzipped)");
    app.add_option("--csv", spec.csv, "CSV file, one sample per row");
    app.add_option("--label-col", spec.csv_layout.label_column,
                   "CSV label column; negative counts from the end")
        ->capture_default_str();
    app.add_option("--group-col", spec.csv_layout.group_column,
                   "CSV party column for the by-column partition");
    app.add_flag("--no-header", no_header, "CSV has no header row");
    app.add_option("--normalize", normalization, "divide255 | zscore | none")
        ->capture_default_str();
    app.add_option("--subsample", subsample, "keep this many rows (0 = all)");
    app.add_option("--train-fraction", spec.train_fraction,
                   "fraction of rows used for training; the rest is the test set")
        ->capture_default_str();
    app.add_option("--seed", spec.seed, "seed for splitting, subsampling and k-means")
        ->capture_default_str();
    if (with_partition) {
      app.add_option("--partition", partition,
                     "odd-even-digits | by-column | class-ranges:a-b,c-d,...")
          ->capture_default_str();
    }
  }

  mmfhe::DatasetSpec resolve() {
    spec.csv_layout.header = !no_header;
    spec.normalization = mmfhe::normalization_from_string(normalization);
    spec.subsample = subsample;
    spec.partition = mmfhe::partition_from_string(partition);
    if (spec.partition.kind != mmfhe::PartitionSpec::Kind::by_column &&
        spec.csv_layout.group_column == -2) {
      spec.csv_layout.group_column = mmfhe::CsvLayout::kNoGroup;
    }
    return spec;
  }
};

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<mmfhe::BankPtr> load_banks(const std::vector<std::string> &dirs, int *n_b) {
  std::vector<mmfhe::BankPtr> banks;
  for (const auto &d : dirs) {
    auto a = mmfhe::load_archive(d);
    if (n_b != nullptr && *n_b == 0) *n_b = a.hyper.n_b;
    banks.push_back(std::make_shared<const mmfhe::AttributeBank>(std::move(a.attributes)));
  }
  if (banks.empty()) throw mmfhe::InputError("no party archives given");
  return banks;
}

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
}

int run(int argc, char **argv) {
  CLI::App app{"Privacy-preserving fuzzy classification over membership-mapping autoencoders"};
  app.require_subcommand(1);

  // train
  auto *train = app.add_subcommand("train", "train one party archive per partition");
  DataFlags train_data;
  train_data.add(*train, true);
  mmfhe::TrainHyper hyper;
  std::string out_dir, membership = "gaussian";
  std::string r_grid = "0.5";
  unsigned workers = 0;
  train->add_option("--out", out_dir, "output directory (party_<k> subdirectories)")->required();
  train->add_option("--L", hyper.l_count, "layers per CDMMA")->capture_default_str();
  train->add_option("--n", hyper.n, "latent dimension of the first layer")->capture_default_str();
  train->add_option("--r-grid", r_grid, "comma-separated r_max candidates")->capture_default_str();
  train->add_option("--part-size", hyper.part_size, "target k-means part size")->capture_default_str();
  train->add_option("--n-b", hyper.n_b, "bit width recorded in the archive")->capture_default_str();
  train->add_option("--membership", membership, "gaussian | student_t")->capture_default_str();
  train->add_option("--workers", workers, "classes trained concurrently (0 = cores)");

  // eval
  auto *eval = app.add_subcommand("eval", "evaluate party archives on a test set");
  DataFlags eval_data;
  eval_data.add(*eval, false);
  std::string parties, mode = "plain", report_json;
  int eval_nb = 0;
  long long limit = 0;
  eval->add_option("--parties", parties, "comma-separated archive directories")->required();
  eval->add_option("--mode", mode, "plain | encrypted")->capture_default_str();
  eval->add_option("--n-b", eval_nb, "bit width (encrypted default: archive value)");
  eval->add_option("--limit", limit, "evaluate at most this many test rows");
  eval->add_option("--report-json", report_json, "also write the report as JSON");

  // serve-cloud
  auto *cloud = app.add_subcommand("serve-cloud", "run the cloud role over TCP");
  std::string cloud_listen = "127.0.0.1:7000";
  double latency_ms = 13.0;
  long long timeout_ms = 30000;
  cloud->add_option("--listen", cloud_listen, "host:port")->capture_default_str();
  cloud->add_option("--latency-ms", latency_ms, "simulated latency per bootstrapped gate")
      ->capture_default_str();
  cloud->add_option("--timeout-ms", timeout_ms, "per-stage timeout")->capture_default_str();

  // serve-party
  auto *party = app.add_subcommand("serve-party", "run a party role over TCP");
  std::string archive, party_listen = "127.0.0.1:7001", party_cloud = "127.0.0.1:7000";
  party->add_option("--archive", archive, "party archive directory")->required();
  party->add_option("--listen", party_listen, "host:port")->capture_default_str();
  party->add_option("--cloud", party_cloud, "cloud host:port")->capture_default_str();
  party->add_option("--timeout-ms", timeout_ms, "per-stage timeout")->capture_default_str();

  // query
  auto *query = app.add_subcommand("query", "classify one input over TCP as the user");
  std::string q_cloud = "127.0.0.1:7000", q_parties, q_values;
  DataFlags query_data;
  long long q_index = 0;
  int q_nb = 16;
  query->add_option("--cloud", q_cloud, "cloud host:port")->capture_default_str();
  query->add_option("--parties", q_parties, "comma-separated party host:port list")->required();
  query->add_option("--values", q_values, "comma-separated feature vector (already normalized)");
  query->add_option("--index", q_index, "row of the dataset given by --images/--labels or --csv");
  query->add_option("--n-b", q_nb, "8 | 16")->capture_default_str();
  query->add_option("--timeout-ms", timeout_ms, "per-stage timeout")->capture_default_str();
  query_data.add(*query, false);

  // sweep-k
  auto *sweep = app.add_subcommand("sweep-k", "cloud gate counts and simulated time versus K");
  std::string k_list = "2,10,25,50,100";
  int sweep_nb = 16;
  std::uint64_t sweep_seed = 7;
  sweep->add_option("--k", k_list, "comma-separated party counts")->capture_default_str();
  sweep->add_option("--n-b", sweep_nb, "bit width")->capture_default_str();
  sweep->add_option("--latency-ms", latency_ms, "simulated latency per bootstrapped gate")
      ->capture_default_str();
  sweep->add_option("--seed", sweep_seed, "seed for the synthetic scores")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }

  if (*train) {
    const auto spec = train_data.resolve();
    hyper.seed = spec.seed;
    hyper.normalization = train_data.normalization;
    hyper.membership.kind = mmfhe::membership_kind_from_string(membership);
    hyper.r_grid.clear();
    for (const auto &r : split_list(r_grid)) hyper.r_grid.push_back(std::stod(r));
    auto [train_set, test_set] = mmfhe::ingest_split(spec);
    const auto parts = mmfhe::partition(train_set, spec.partition);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto a = mmfhe::train_party(parts[k], hyper, workers);
      const auto dir = std::filesystem::path(out_dir) / ("party_" + std::to_string(k));
      mmfhe::save_archive(a, dir);
      std::cout << "party " << k << ": " << parts[k].size() << " rows, "
                << a.attributes.size() << " classes, "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                << " s -> " << dir.string() << '\n';
    }
    return kExitOk;
  }

  if (*eval) {
    int n_b = eval_nb;
    const auto m = mmfhe::eval_mode_from_string(mode);
    const auto banks = load_banks(split_list(parties), m == mmfhe::EvalMode::encrypted && n_b == 0 ? &n_b : nullptr);
    auto spec = eval_data.resolve();
    auto [train_set, test_set] = mmfhe::ingest_split(spec);
    const mmfhe::Dataset &test = spec.train_fraction < 1.0 ? test_set : train_set;
    mmfhe::EvalOptions opt;
    opt.mode = m;
    opt.n_b = n_b;
    opt.seed = spec.seed;
    opt.limit = limit;
    const auto rep = mmfhe::evaluate(banks, test, opt);
    mmfhe::print_report(std::cout, rep);
    if (!report_json.empty()) {
      std::ofstream f(report_json);
      f << mmfhe::report_json(rep).dump(2) << '\n';
      if (!f) throw mmfhe::InputError("cannot write " + report_json);
    }
    return kExitOk;
  }

  if (*cloud) {
    mmfhe::proto::CloudOptions opt;
    opt.timeout = std::chrono::milliseconds(timeout_ms);
    opt.latency.gate_seconds = latency_ms / 1000.0;
    mmfhe::proto::CloudService svc(opt);
    const auto [host, port] = mmfhe::net::parse_endpoint(cloud_listen);
    mmfhe::net::TcpServer server(host, port, [&svc](mmfhe::net::Connection &c) { svc.handle(c); });
    std::cout << "cloud listening on " << host << ':' << server.port() << std::endl;
    wait_for_signal();
    server.stop();
    return kExitOk;
  }

  if (*party) {
    auto a = mmfhe::load_archive(archive);
    auto bank = std::make_shared<const mmfhe::AttributeBank>(std::move(a.attributes));
    mmfhe::net::TcpTransport transport;
    mmfhe::proto::PartyService svc(bank, transport, party_cloud,
                                   std::chrono::milliseconds(timeout_ms));
    const auto [host, port] = mmfhe::net::parse_endpoint(party_listen);
    mmfhe::net::TcpServer server(host, port, [&svc](mmfhe::net::Connection &c) { svc.handle(c); });
    std::cout << "party listening on " << host << ':' << server.port() << std::endl;
    wait_for_signal();
    server.stop();
    return kExitOk;
  }

  if (*query) {
    Eigen::VectorXd y;
    int truth = -1;
    if (!q_values.empty()) {
      const auto vals = split_list(q_values);
      y.resize(static_cast<Eigen::Index>(vals.size()));
      for (std::size_t i = 0; i < vals.size(); ++i) y[static_cast<Eigen::Index>(i)] = mmfhe::parse_number(vals[i]);
    } else {
      auto spec = query_data.resolve();
      spec.train_fraction = 1.0;
      const auto ds = mmfhe::ingest(spec);
      if (q_index < 0 || q_index >= ds.size()) throw mmfhe::InputError("--index out of range");
      y = ds.features.row(q_index).transpose();
      truth = ds.labels[static_cast<std::size_t>(q_index)];
    }
    mmfhe::proto::Endpoints ep{q_cloud, split_list(q_parties)};
    mmfhe::proto::SessionConfig cfg;
    cfg.n_b = q_nb;
    cfg.k = static_cast<int>(ep.parties.size());
    cfg.timeout = std::chrono::milliseconds(timeout_ms);
    mmfhe::net::TcpTransport transport;
    const auto keys = mmfhe::fhe::PlainSimBackend::keygen();
    const auto r = mmfhe::proto::run_user(y, cfg, keys, transport, ep);
    std::cout << "label " << r.label << " (party " << r.winner << ")";
    if (truth >= 0) std::cout << ", truth " << truth;
    std::cout << "\ncloud gates " << r.gates.bootstrapped() << ", simulated "
              << r.simulated_seconds << " s\n";
    return kExitOk;
  }

  if (*sweep) {
    std::vector<int> ks;
    for (const auto &k : split_list(k_list)) ks.push_back(std::stoi(k));
    mmfhe::fhe::LatencyModel lat;
    lat.gate_seconds = latency_ms / 1000.0;
    mmfhe::print_sweep(std::cout, mmfhe::sweep_k(ks, sweep_nb, lat, sweep_seed), sweep_nb);
    return kExitOk;
  }
  return kExitFailure;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return run(argc, argv);
  } catch (const mmfhe::InputError &e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument &e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::out_of_range &e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const mmfhe::ConvergenceError &e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const mmfhe::LearnError &e) {
    std::cerr << "learning error: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
