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

#include "mmfhe/protocol.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <mutex>
#include <random>
#include <vector>

#include "support/attributes.hpp"

namespace mmfhe::proto {
namespace {

using testing::random_banks;

const Millis kWait(5000);

/// Label chosen by the plaintext pipeline on n_b-bit quantized scores.
int quantized_reference(const VectorXd &y,
                        const std::vector<std::shared_ptr<const AttributeBank>> &banks,
                        int n_b) {
  std::vector<std::uint64_t> q;
  std::vector<int> labels;
  for (const auto &bank : banks) {
    const LocalScore s = local_classify(y, *bank);
    const double top = std::ldexp(1.0, n_b) - 1.0;
    q.push_back(static_cast<std::uint64_t>(std::ceil(top * std::clamp(s.mu_bar, 0.0, 1.0))));
    labels.push_back(s.label);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < q.size(); ++k) {
    if (q[k] < q[best]) best = k;
  }
  return labels[best];
}

VectorXd random_point(std::mt19937_64 &rng, Index p) {
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  VectorXd y(p);
  for (Index i = 0; i < p; ++i) y[i] = u(rng);
  return y;
}

// --- serialization --------------------------------------------------------

TEST(Wire, BitTokenRoundTrip) {
  const auto keys = fhe::PlainSimBackend::keygen(1);
  for (bool v : {false, true}) {
    const Bit b = keys.secret.encrypt(v);
    const Bit back = decode_bit(Json(encode_bit(b)));
    EXPECT_EQ(back.key_id, b.key_id);
    EXPECT_EQ(back.bit_id, b.bit_id);
    EXPECT_EQ(keys.secret.decrypt(back), v);
  }
  EXPECT_THROW(decode_bit(Json(42)), ProtocolError);
  EXPECT_THROW(decode_bit(Json("AAAA")), ProtocolError);
}

TEST(Wire, WordWidthChecked) {
  const auto keys = fhe::PlainSimBackend::keygen(2);
  const Word w = fhe::encrypt_integer(200, 8, keys.secret);
  EXPECT_EQ(fhe::decrypt_word(decode_word(encode_word(w), 8), keys.secret), 200u);
  EXPECT_THROW(decode_word(encode_word(w), 16), ProtocolError);
}

TEST(Wire, CloudKeyRoundTrip) {
  const auto keys = fhe::PlainSimBackend::keygen(3);
  const Json j = encode_cloud_key(keys.cloud);
  EXPECT_EQ(j["backend"], "plainsim");
  const fhe::SimCloudKey k = decode_cloud_key(j);
  EXPECT_EQ(k.key_id(), keys.cloud.key_id());
  EXPECT_EQ(keys.secret.decrypt(k.encrypt(true)), true);
  Json bad = j;
  bad["backend"] = "tfhe";
  EXPECT_THROW(decode_cloud_key(bad), ProtocolError);
  bad = j;
  bad["key_id"] = "xyz";
  EXPECT_THROW(decode_cloud_key(bad), ProtocolError);
}

TEST(Wire, SessionIds) {
  const std::string a = new_session_id(), b = new_session_id();
  EXPECT_EQ(a.size(), 32u);
  EXPECT_NE(a, b);
}

TEST(Wire, SessionConfigValidation) {
  SessionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_b = 12;
  EXPECT_THROW(c.validate(), InputError);
  c.n_b = 8;
  c.k = 0;
  EXPECT_THROW(c.validate(), InputError);
}

// --- cloud evaluation -----------------------------------------------------

TEST(Cloud, SinglePartyNeedsNoGates) {
  const auto keys = fhe::PlainSimBackend::keygen(4);
  const CloudEvaluation ev =
      evaluate_scores(keys.cloud, {fhe::encrypt_integer(77, 16, keys.cloud)});
  ASSERT_EQ(ev.onehot.size(), 1u);
  EXPECT_TRUE(keys.secret.decrypt(ev.onehot[0]));
  EXPECT_EQ(ev.gates.total(), 0u);
  EXPECT_EQ(ev.simulated_seconds, 0.0);
}

TEST(Cloud, GateGrowthIsAffine) {
  const auto keys = fhe::PlainSimBackend::keygen(5);
  auto count = [&](int k) {
    std::vector<Word> w;
    for (int i = 0; i < k; ++i) w.push_back(fhe::encrypt_integer(i * 3 % 7, 16, keys.cloud));
    return evaluate_scores(keys.cloud, w).gates.bootstrapped();
  };
  EXPECT_EQ(count(4) - count(2), count(6) - count(4));
}

TEST(Cloud, OneHotMatchesQuantizedArgmin) {
  const auto keys = fhe::PlainSimBackend::keygen(6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + trial % 6;
    std::vector<double> mu(static_cast<std::size_t>(k));
    for (double &m : mu) m = trial % 3 == 0 ? std::round(u(rng) * 4) / 4 : u(rng);
    std::vector<Word> w;
    std::vector<std::uint64_t> q;
    for (double m : mu) {
      w.push_back(fhe::encrypt_word(m, 8, keys.cloud));
      q.push_back(fhe::encode_unit_interval(m, 8));
    }
    const CloudEvaluation ev = evaluate_scores(keys.cloud, w);
    const std::size_t ref = static_cast<std::size_t>(
        std::min_element(q.begin(), q.end()) - q.begin());
    for (int i = 0; i < k; ++i) {
      EXPECT_EQ(keys.secret.decrypt(ev.onehot[static_cast<std::size_t>(i)]),
                static_cast<std::size_t>(i) == ref);
    }
  }
}

// --- parties --------------------------------------------------------------

TEST(Party, OutputDecryptsToLabelAndQuantizedScore) {
  const auto banks = random_banks(1, 3, 2, 8);
  net::InProcessTransport t;
  std::mutex mu;
  std::vector<Json> seen;
  t.listen("cloud", [&](net::Connection &c) {
    const Json m = c.recv(kWait);
    {
      std::lock_guard lk(mu);
      seen.push_back(m);
    }
    c.send({{"kind", kind::kAck}, {"session", m["session"]}});
  });
  PartyService party(banks[0], t, "cloud", kWait);
  t.listen("party", [&](net::Connection &c) { party.handle(c); });

  const auto keys = fhe::PlainSimBackend::keygen(9);
  std::mt19937_64 rng(10);
  for (int n_b : {8, 16}) {
    for (int i = 0; i < 20; ++i) {
      const VectorXd y = random_point(rng, 2);
      for (int rep = 0; rep < 2; ++rep) {
        auto c = t.connect("party");
        c->send({{"kind", kind::kQuery}, {"session", "s"}, {"party", 0}, {"n_b", n_b},
                 {"y", std::vector<double>(y.data(), y.data() + 2)},
                 {"cloud_key", encode_cloud_key(keys.cloud)}});
        EXPECT_EQ(c->recv(kWait)["kind"], kind::kAck);
      }
      std::lock_guard lk(mu);
      ASSERT_EQ(seen.size(), 2u);
      const LocalScore s = local_classify(y, *banks[0]);
      for (const Json &m : seen) {
        EXPECT_EQ(m["kind"], kind::kPartyScore);
        const auto label = fhe::decrypt_word(decode_word(m["label"], n_b), keys.secret);
        const auto q = fhe::decrypt_word(decode_word(m["mu_bar"], n_b), keys.secret);
        EXPECT_EQ(label, static_cast<std::uint64_t>(s.label));
        EXPECT_EQ(q, static_cast<std::uint64_t>(
                         std::ceil((std::ldexp(1.0, n_b) - 1.0) * s.mu_bar)));
      }
      seen.clear();
    }
  }
}

TEST(Party, RejectsEmptyBank) {
  net::InProcessTransport t;
  EXPECT_THROW(PartyService(std::make_shared<AttributeBank>(), t, "cloud"), InputError);
}

// --- end to end -----------------------------------------------------------

TEST(EndToEnd, InProcessMatchesQuantizedPlaintext) {
  const auto banks = random_banks(3, 4, 3, 11);
  LocalDeployment dep(banks);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 120; ++i) {
    const VectorXd y = random_point(rng, 3);
    const int n_b = i % 2 == 0 ? 8 : 16;
    const QueryResult r = dep.query(y, n_b, fhe::PlainSimBackend::keygen(rng()));
    EXPECT_EQ(r.label, quantized_reference(y, banks, n_b)) << "query " << i;
    EXPECT_EQ(std::count(r.delta.begin(), r.delta.end(), 1), 1);
    EXPECT_EQ(r.labels[r.winner], r.label);
    EXPECT_GT(r.gates.total(), 0u);
    EXPECT_DOUBLE_EQ(r.simulated_seconds, fhe::LatencyModel{}.seconds(r.gates));
  }
  EXPECT_EQ(dep.cloud().open_sessions(), 0u);
}

TEST(EndToEnd, SinglePartyReturnsLocalLabel) {
  const auto banks = random_banks(1, 5, 2, 13);
  LocalDeployment dep(banks);
  std::mt19937_64 rng(14);
  for (int i = 0; i < 30; ++i) {
    const VectorXd y = random_point(rng, 2);
    const QueryResult r = dep.query(y, 16, fhe::PlainSimBackend::keygen(rng()));
    EXPECT_EQ(r.label, local_classify(y, *banks[0]).label);
    EXPECT_EQ(r.gates.total(), 0u);
  }
}

TEST(EndToEnd, ConcurrentSessions) {
  const auto banks = random_banks(2, 3, 2, 15);
  LocalDeployment dep(banks);
  std::vector<std::future<bool>> jobs;
  for (int j = 0; j < 6; ++j) {
    jobs.push_back(std::async(std::launch::async, [&, j] {
      std::mt19937_64 rng(100 + j);
      bool ok = true;
      for (int i = 0; i < 10; ++i) {
        const VectorXd y = random_point(rng, 2);
        ok = ok && dep.query(y, 16, fhe::PlainSimBackend::keygen(rng())).label ==
                       quantized_reference(y, banks, 16);
      }
      return ok;
    }));
  }
  for (auto &f : jobs) EXPECT_TRUE(f.get());
}

TEST(EndToEnd, OverTcp) {
  const auto banks = random_banks(2, 3, 2, 16);
  CloudService cloud;
  net::TcpServer cloud_srv("127.0.0.1", 0, [&](net::Connection &c) { cloud.handle(c); });
  const std::string cloud_ep = "127.0.0.1:" + std::to_string(cloud_srv.port());
  net::TcpTransport tcp;
  std::vector<std::unique_ptr<PartyService>> parties;
  std::vector<std::unique_ptr<net::TcpServer>> servers;
  Endpoints ep{cloud_ep, {}};
  for (const auto &b : banks) {
    parties.push_back(std::make_unique<PartyService>(b, tcp, cloud_ep));
    PartyService *svc = parties.back().get();
    servers.push_back(std::make_unique<net::TcpServer>(
        "127.0.0.1", 0, [svc](net::Connection &c) { svc->handle(c); }));
    ep.parties.push_back("127.0.0.1:" + std::to_string(servers.back()->port()));
  }
  std::mt19937_64 rng(17);
  SessionConfig cfg;
  cfg.k = 2;
  for (int i = 0; i < 20; ++i) {
    const VectorXd y = random_point(rng, 2);
    const QueryResult r = run_user(y, cfg, fhe::PlainSimBackend::keygen(rng()), tcp, ep);
    EXPECT_EQ(r.label, quantized_reference(y, banks, 16));
  }
  for (auto &s : servers) s->stop();
  cloud_srv.stop();
}

TEST(EndToEnd, MissingPartyScoreAbortsSession) {
  CloudOptions opt;
  opt.timeout = Millis(300);
  CloudService cloud(opt);
  net::InProcessTransport t;
  t.listen("cloud", [&](net::Connection &c) { cloud.handle(c); });
  // Acknowledges the query without ever scoring it.
  t.listen("silent", [](net::Connection &c) {
    const Json q = c.recv(kWait);
    c.send({{"kind", kind::kAck}, {"session", q["session"]}});
  });
  SessionConfig cfg;
  cfg.k = 1;
  cfg.timeout = Millis(3000);
  try {
    run_user(VectorXd::Zero(2), cfg, fhe::PlainSimBackend::keygen(18), t,
             Endpoints{"cloud", {"silent"}});
    FAIL() << "expected an abort";
  } catch (const ProtocolError &e) {
    EXPECT_NE(std::string(e.what()).find("aborted"), std::string::npos) << e.what();
  }
  EXPECT_EQ(cloud.open_sessions(), 0u);
}

TEST(EndToEnd, NonOneHotResultRejected) {
  net::InProcessTransport t;
  t.listen("cloud", [](net::Connection &c) {
    const Json m = c.recv(kWait);
    const fhe::SimCloudKey key = decode_cloud_key(m["cloud_key"]);
    Json pairs = Json::array();
    for (int p = 0; p < m["k"].get<int>(); ++p) {
      pairs.push_back({{"label", encode_word(fhe::encrypt_integer(1, 8, key))},
                       {"delta", encode_bit(key.encrypt(false))}});
    }
    c.send({{"kind", kind::kCloudResult}, {"session", m["session"]}, {"pairs", pairs},
            {"gates", gate_json({})}});
  });
  t.listen("party", [](net::Connection &c) {
    const Json q = c.recv(kWait);
    c.send({{"kind", kind::kAck}, {"session", q["session"]}});
  });
  SessionConfig cfg;
  cfg.n_b = 8;
  cfg.k = 2;
  EXPECT_THROW(run_user(VectorXd::Zero(1), cfg, fhe::PlainSimBackend::keygen(19), t,
                        Endpoints{"cloud", {"party", "party"}}),
               ProtocolError);
}

TEST(EndToEnd, TamperedFrameGetsError) {
  CloudService cloud;
  net::InProcessTransport t;
  t.listen("cloud", [&](net::Connection &c) { cloud.handle(c); });
  auto c = t.connect("cloud");
  const std::string body = Json{{"v", 1}, {"kind", "PartyScore"}}.dump();
  std::string frame = net::encode_frame(body);
  frame[frame.size() - 2] = '@';
  c->write_bytes(frame);
  EXPECT_EQ(c->recv(kWait)["kind"], kind::kError);

  auto d = t.connect("cloud");
  d->send({{"kind", kind::kPartyScore}, {"session", "x"}, {"party", 0}, {"n_b", 8},
           {"label", Json::array()}, {"mu_bar", Json::array()}});
  EXPECT_EQ(d->recv(kWait)["kind"], kind::kError);
}

TEST(EndToEnd, UserRejectsWrongEndpointCount) {
  net::InProcessTransport t;
  SessionConfig cfg;
  cfg.k = 2;
  EXPECT_THROW(run_user(VectorXd::Zero(1), cfg, fhe::PlainSimBackend::keygen(20), t,
                        Endpoints{"cloud", {"p"}}),
               InputError);
}

}  // namespace
}  // namespace mmfhe::proto
