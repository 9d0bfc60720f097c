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

#ifndef MMFHE_PROTOCOL_HPP_
#define MMFHE_PROTOCOL_HPP_

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmfhe/errors.hpp"
#include "mmfhe/fuzzy.hpp"
#include "mmfhe/gates.hpp"
#include "mmfhe/net.hpp"

namespace mmfhe::proto {

using net::Json;
using net::Millis;
using Bit = fhe::SimBit;
using Word = fhe::EncryptedWord<Bit>;

namespace kind {
inline constexpr const char *kKeyDistribution = "KeyDistribution";
inline constexpr const char *kQuery = "Query";
inline constexpr const char *kPartyScore = "PartyScore";
inline constexpr const char *kCloudResult = "CloudResult";
inline constexpr const char *kAck = "Ack";
inline constexpr const char *kError = "Error";
}  // namespace kind

enum class TiePolicy { smallest_index };

struct SessionConfig {
  int n_b = 16;
  int k = 1;
  TiePolicy tie = TiePolicy::smallest_index;
  Millis timeout{30000};

  void validate() const {
    if (k < 1) throw InputError("session: k must be >= 1");
    if (n_b != 8 && n_b != 16) throw InputError("session: n_b must be 8 or 16");
  }
};

// ---------------------------------------------------------------------------
// Serialization

inline std::string new_session_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx",
                static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

inline constexpr std::uint8_t kSimTag = 0x53;

/// Token layout: tag, key id (LE64), bit id (LE64), payload byte.
inline std::string encode_bit(const Bit &b) {
  std::uint8_t raw[18];
  raw[0] = kSimTag;
  for (int i = 0; i < 8; ++i) {
    raw[1 + i] = static_cast<std::uint8_t>(b.key_id >> (8 * i));
    raw[9 + i] = static_cast<std::uint8_t>(b.bit_id >> (8 * i));
  }
  raw[17] = b.payload;
  return net::base64_encode(raw, sizeof raw);
}

inline Bit decode_bit(const Json &j) {
  if (!j.is_string()) throw ProtocolError("ciphertext token must be a string");
  const auto raw = net::base64_decode(j.get<std::string>());
  if (raw.size() != 18 || raw[0] != kSimTag) throw ProtocolError("bad ciphertext token");
  Bit b;
  for (int i = 0; i < 8; ++i) {
    b.key_id |= std::uint64_t{raw[1 + i]} << (8 * i);
    b.bit_id |= std::uint64_t{raw[9 + i]} << (8 * i);
  }
  b.payload = raw[17];
  return b;
}

inline Json encode_word(const Word &w) {
  Json a = Json::array();
  for (const auto &b : w.bits) a.push_back(encode_bit(b));
  return a;
}

inline Word decode_word(const Json &j, int n_b) {
  if (!j.is_array() || static_cast<int>(j.size()) != n_b) {
    throw ProtocolError("encrypted word has the wrong width");
  }
  Word w;
  for (const auto &t : j) w.bits.push_back(decode_bit(t));
  return w;
}

inline Json encode_cloud_key(const fhe::SimCloudKey &k) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(k.key_id()));
  return {{"backend", fhe::PlainSimBackend::kId}, {"key_id", buf}};
}

inline fhe::SimCloudKey decode_cloud_key(const Json &j) {
  if (!j.is_object() || j.value("backend", "") != fhe::PlainSimBackend::kId ||
      !j.contains("key_id") || !j["key_id"].is_string()) {
    throw ProtocolError("unsupported cloud key");
  }
  const std::string hex = j["key_id"].get<std::string>();
  if (hex.size() != 16 || hex.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw ProtocolError("malformed cloud key id");
  }
  return fhe::SimCloudKey(std::stoull(hex, nullptr, 16));
}

inline Json gate_json(const fhe::GateTally &t) {
  Json j = Json::object();
  for (std::size_t i = 0; i < fhe::kGateKinds; ++i) {
    j[fhe::gate_name(static_cast<fhe::Gate>(i))] = t.counts[i];
  }
  return j;
}

inline fhe::GateTally gate_tally(const Json &j) {
  fhe::GateTally t;
  for (std::size_t i = 0; i < fhe::kGateKinds; ++i) {
    t.counts[i] = j.value(fhe::gate_name(static_cast<fhe::Gate>(i)), std::uint64_t{0});
  }
  return t;
}

namespace detail {

template <typename T>
T field(const Json &j, const char *name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ProtocolError(std::string("missing field: ") + name);
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception &) {
    throw ProtocolError(std::string("bad field: ") + name);
  }
}

inline void expect_kind(const Json &msg, const char *k, const std::string &session) {
  const auto got = msg["kind"].get<std::string>();
  if (got == kind::kError) {
    throw ProtocolError("peer error: " + msg.value("message", std::string("unknown")));
  }
  if (got != k) throw ProtocolError("unexpected message kind: " + got);
  if (!session.empty() && msg.value("session", std::string()) != session) {
    throw ProtocolError("session mismatch");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cloud

struct CloudEvaluation {
  std::vector<Bit> onehot;
  fhe::GateTally gates;
  double simulated_seconds = 0.0;
};

/// One-hot argmin over the parties' mu_bar words with a dedicated gate
/// counter for this evaluation.
inline CloudEvaluation evaluate_scores(const fhe::SimCloudKey &key,
                                       const std::vector<Word> &mu_bar,
                                       const fhe::LatencyModel &latency = {}) {
  fhe::SimCloudKey k = key.fork();
  CloudEvaluation out;
  out.onehot = fhe::circuit_argmin_onehot(k, mu_bar);
  out.gates = k.gate_counts();
  out.simulated_seconds = latency.seconds(out.gates);
  return out;
}

struct CloudOptions {
  Millis timeout{30000};
  fhe::LatencyModel latency;
};

/// Cloud role. Sessions are independent; a session completes when its user
/// has delivered the cloud key and all k party scores have arrived.
class CloudService {
 public:
  explicit CloudService(CloudOptions opt = {}) : opt_(opt) {}

  void handle(net::Connection &c) {
    const Json msg = c.recv(opt_.timeout);
    const auto k = msg["kind"].get<std::string>();
    if (k == kind::kKeyDistribution) {
      on_key_distribution(c, msg);
    } else if (k == kind::kPartyScore) {
      on_party_score(c, msg);
    } else {
      throw ProtocolError("cloud: unexpected message kind " + k);
    }
  }

  fhe::GateTally total_gates() const {
    std::lock_guard lk(mu_);
    return total_;
  }

  std::size_t open_sessions() const {
    std::lock_guard lk(mu_);
    return sessions_.size();
  }

 private:
  struct Score {
    Word label;
    Word mu_bar;
  };
  struct Session {
    std::optional<fhe::SimCloudKey> key;
    int k = 0;
    int n_b = 0;
    std::map<int, Score> scores;
    std::chrono::steady_clock::time_point created = std::chrono::steady_clock::now();
  };

  std::shared_ptr<Session> session_locked(const std::string &id) {
    const auto now = std::chrono::steady_clock::now();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (!it->second->key && now - it->second->created > 2 * opt_.timeout) {
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
    auto &s = sessions_[id];
    if (!s) s = std::make_shared<Session>();
    return s;
  }

  void on_key_distribution(net::Connection &c, const Json &msg) {
    const auto id = detail::field<std::string>(msg, "session");
    SessionConfig cfg;
    cfg.k = detail::field<int>(msg, "k");
    cfg.n_b = detail::field<int>(msg, "n_b");
    try {
      cfg.validate();
    } catch (const InputError &e) {
      throw ProtocolError(e.what());
    }
    auto key = decode_cloud_key(msg.at("cloud_key"));

    std::unique_lock lk(mu_);
    auto s = session_locked(id);
    if (s->key) throw ProtocolError("cloud: duplicate key for session");
    s->key = key;
    s->k = cfg.k;
    s->n_b = cfg.n_b;
    cv_.notify_all();
    const bool complete = cv_.wait_for(lk, opt_.timeout, [&] {
      return static_cast<int>(s->scores.size()) >= s->k;
    });
    sessions_.erase(id);
    if (!complete) {
      lk.unlock();
      c.send({{"kind", kind::kError}, {"session", id},
              {"message", "session aborted: missing party score"}});
      return;
    }
    lk.unlock();

    std::vector<Word> labels, mu;
    for (int p = 0; p < s->k; ++p) {
      const auto it = s->scores.find(p);
      if (it == s->scores.end() || it->second.mu_bar.width() != s->n_b ||
          it->second.label.width() != s->n_b) {
        c.send({{"kind", kind::kError}, {"session", id},
                {"message", "inconsistent party scores"}});
        return;
      }
      labels.push_back(it->second.label);
      mu.push_back(it->second.mu_bar);
    }
    CloudEvaluation ev;
    try {
      ev = evaluate_scores(*s->key, mu, opt_.latency);
    } catch (const InputError &e) {
      c.send({{"kind", kind::kError}, {"session", id}, {"message", e.what()}});
      return;
    }
    {
      std::lock_guard g(mu_);
      total_ += ev.gates;
    }
    Json pairs = Json::array();
    for (int p = 0; p < s->k; ++p) {
      pairs.push_back({{"label", encode_word(labels[p])},
                       {"delta", encode_bit(ev.onehot[p])}});
    }
    c.send({{"kind", kind::kCloudResult},
            {"session", id},
            {"pairs", pairs},
            {"gates", gate_json(ev.gates)},
            {"simulated_seconds", ev.simulated_seconds}});
  }

  void on_party_score(net::Connection &c, const Json &msg) {
    const auto id = detail::field<std::string>(msg, "session");
    const int party = detail::field<int>(msg, "party");
    const int n_b = detail::field<int>(msg, "n_b");
    if (n_b != 8 && n_b != 16) throw ProtocolError("party score: bad n_b");
    Score sc{decode_word(msg.at("label"), n_b), decode_word(msg.at("mu_bar"), n_b)};
    {
      std::lock_guard lk(mu_);
      auto s = session_locked(id);
      if (s->key && (party < 0 || party >= s->k || n_b != s->n_b)) {
        throw ProtocolError("party score does not match the session");
      }
      if (!s->scores.emplace(party, std::move(sc)).second) {
        throw ProtocolError("duplicate party score");
      }
      cv_.notify_all();
    }
    c.send({{"kind", kind::kAck}, {"session", id}});
  }

  CloudOptions opt_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  fhe::GateTally total_;
};

// ---------------------------------------------------------------------------
// Party

/// Party role: answers a Query with its local winner, encrypted under the
/// session's cloud key and delivered to the cloud.
class PartyService {
 public:
  PartyService(std::shared_ptr<const AttributeBank> bank, net::Transport &transport,
               std::string cloud_endpoint, Millis timeout = Millis(30000))
      : bank_(std::move(bank)),
        transport_(transport),
        cloud_(std::move(cloud_endpoint)),
        timeout_(timeout) {
    if (!bank_ || bank_->empty()) throw InputError("party: no trained attributes");
  }

  void handle(net::Connection &c) {
    const Json q = c.recv(timeout_);
    detail::expect_kind(q, kind::kQuery, "");
    const auto id = detail::field<std::string>(q, "session");
    const int party = detail::field<int>(q, "party");
    const int n_b = detail::field<int>(q, "n_b");
    const auto y_vals = detail::field<std::vector<double>>(q, "y");
    const auto key = decode_cloud_key(q.at("cloud_key"));

    const Eigen::Map<const VectorXd> y(y_vals.data(), static_cast<Index>(y_vals.size()));
    if (y.size() != bank_->front().data_dim()) throw ProtocolError("query: dimension mismatch");
    const LocalScore s = local_classify(VectorXd(y), *bank_);
    if (s.label < 0 || (static_cast<std::uint64_t>(s.label) >> n_b) != 0) {
      throw ProtocolError("label does not fit in n_b bits");
    }

    const Word label = fhe::encrypt_integer(static_cast<std::uint64_t>(s.label), n_b, key);
    const Word mu = fhe::encrypt_word(std::clamp(s.mu_bar, 0.0, 1.0), n_b, key);
    auto cloud = transport_.connect(cloud_);
    cloud->send({{"kind", kind::kPartyScore},
                 {"session", id},
                 {"party", party},
                 {"n_b", n_b},
                 {"label", encode_word(label)},
                 {"mu_bar", encode_word(mu)}});
    detail::expect_kind(cloud->recv(timeout_), kind::kAck, id);
    c.send({{"kind", kind::kAck}, {"session", id}});
  }

 private:
  std::shared_ptr<const AttributeBank> bank_;
  net::Transport &transport_;
  std::string cloud_;
  Millis timeout_;
};

// ---------------------------------------------------------------------------
// User

struct Endpoints {
  std::string cloud;
  std::vector<std::string> parties;
};

struct QueryResult {
  int label = 0;
  std::size_t winner = 0;
  std::vector<int> labels;
  std::vector<int> delta;
  fhe::GateTally gates;
  double simulated_seconds = 0.0;
};

/// Full user side of one encrypted query.
inline QueryResult run_user(const VectorXd &y, const SessionConfig &cfg,
                            const fhe::SimKeyPair &keys, net::Transport &transport,
                            const Endpoints &ep) {
  cfg.validate();
  if (static_cast<int>(ep.parties.size()) != cfg.k) {
    throw InputError("run_user: endpoint count differs from k");
  }
  const std::string id = new_session_id();
  const Json cloud_key = encode_cloud_key(keys.cloud);

  auto cloud = transport.connect(ep.cloud);
  cloud->send({{"kind", kind::kKeyDistribution},
               {"session", id},
               {"k", cfg.k},
               {"n_b", cfg.n_b},
               {"cloud_key", cloud_key}});

  const std::vector<double> y_vals(y.data(), y.data() + y.size());
  std::vector<std::unique_ptr<net::Connection>> parties;
  for (int p = 0; p < cfg.k; ++p) {
    parties.push_back(transport.connect(ep.parties[static_cast<std::size_t>(p)]));
    parties.back()->send({{"kind", kind::kQuery},
                          {"session", id},
                          {"party", p},
                          {"n_b", cfg.n_b},
                          {"y", y_vals},
                          {"cloud_key", cloud_key}});
  }
  for (auto &p : parties) detail::expect_kind(p->recv(cfg.timeout), kind::kAck, id);

  const Json res = cloud->recv(cfg.timeout);
  detail::expect_kind(res, kind::kCloudResult, id);
  const auto &pairs = res.at("pairs");
  if (!pairs.is_array() || static_cast<int>(pairs.size()) != cfg.k) {
    throw ProtocolError("cloud result has the wrong number of pairs");
  }

  QueryResult out;
  int ones = 0;
  for (int p = 0; p < cfg.k; ++p) {
    const auto &pr = pairs[static_cast<std::size_t>(p)];
    const auto label = fhe::decrypt_word(decode_word(pr.at("label"), cfg.n_b), keys.secret);
    const bool d = keys.secret.decrypt(decode_bit(pr.at("delta")));
    out.labels.push_back(static_cast<int>(label));
    out.delta.push_back(d ? 1 : 0);
    if (d) {
      ++ones;
      out.winner = static_cast<std::size_t>(p);
      out.label = static_cast<int>(label);
    }
  }
  if (ones != 1) throw ProtocolError("cloud result is not one-hot");
  out.gates = gate_tally(res.at("gates"));
  out.simulated_seconds = res.value("simulated_seconds", 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// In-process deployment

/// Cloud and K parties wired over an in-process transport.
class LocalDeployment {
 public:
  LocalDeployment(std::vector<std::shared_ptr<const AttributeBank>> banks,
                  CloudOptions cloud_opt = {})
      : cloud_(cloud_opt) {
    ep_.cloud = "cloud";
    transport_.listen(ep_.cloud, [this](net::Connection &c) { cloud_.handle(c); });
    for (std::size_t p = 0; p < banks.size(); ++p) {
      const std::string name = "party/" + std::to_string(p);
      parties_.push_back(std::make_unique<PartyService>(banks[p], transport_, ep_.cloud,
                                                        cloud_opt.timeout));
      PartyService *svc = parties_.back().get();
      transport_.listen(name, [svc](net::Connection &c) { svc->handle(c); });
      ep_.parties.push_back(name);
    }
  }

  QueryResult query(const VectorXd &y, int n_b, const fhe::SimKeyPair &keys) {
    SessionConfig cfg;
    cfg.n_b = n_b;
    cfg.k = static_cast<int>(ep_.parties.size());
    return run_user(y, cfg, keys, transport_, ep_);
  }

  const CloudService &cloud() const { return cloud_; }
  net::InProcessTransport &transport() { return transport_; }
  const Endpoints &endpoints() const { return ep_; }

 private:
  CloudService cloud_;
  std::vector<std::unique_ptr<PartyService>> parties_;
  Endpoints ep_;
  // Destroyed first; joins the handler threads.
  net::InProcessTransport transport_;
};

}  // namespace mmfhe::proto

#endif  // MMFHE_PROTOCOL_HPP_
