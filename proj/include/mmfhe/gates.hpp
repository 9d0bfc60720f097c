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

#ifndef MMFHE_GATES_HPP_
#define MMFHE_GATES_HPP_

#include <array>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mmfhe/errors.hpp"

namespace mmfhe::fhe {

// ---------------------------------------------------------------------------
// Plaintext encoding

/// ceil((2^n_b - 1) * m) for m in [0, 1].
inline std::uint64_t encode_unit_interval(double m, int n_b) {
  if (n_b < 1 || n_b > 62) throw InputError("encode: n_b must be in [1, 62]");
  if (!(m >= 0.0 && m <= 1.0)) throw InputError("encode: m outside [0, 1]");
  const double top = std::ldexp(1.0, n_b) - 1.0;
  return static_cast<std::uint64_t>(std::ceil(top * m));
}

/// n_b bits, least significant first.
inline std::vector<std::uint8_t> bit_decompose(std::uint64_t v, int n_b) {
  if (n_b < 1 || n_b > 63) throw InputError("bit_decompose: bad width");
  if (v >> n_b != 0) throw InputError("bit_decompose: value out of range");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n_b));
  for (int i = 0; i < n_b; ++i) bits[i] = static_cast<std::uint8_t>((v >> i) & 1u);
  return bits;
}

inline std::uint64_t bit_recompose(const std::vector<std::uint8_t> &bits) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    v |= std::uint64_t{bits[i] & 1u} << i;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Gate accounting

enum class Gate : int { kAnd = 0, kOr, kXor, kXnor, kNot, kMux };
inline constexpr std::size_t kGateKinds = 6;

inline const char *gate_name(Gate g) {
  static constexpr const char *names[] = {"and", "or", "xor", "xnor", "not", "mux"};
  return names[static_cast<int>(g)];
}

struct GateTally {
  std::array<std::uint64_t, kGateKinds> counts{};

  std::uint64_t operator[](Gate g) const { return counts[static_cast<int>(g)]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  /// Gates that need a bootstrapping; NOT is a linear operation.
  std::uint64_t bootstrapped() const { return total() - (*this)[Gate::kNot]; }

  GateTally operator-(const GateTally &o) const {
    GateTally r;
    for (std::size_t i = 0; i < kGateKinds; ++i) r.counts[i] = counts[i] - o.counts[i];
    return r;
  }
  GateTally &operator+=(const GateTally &o) {
    for (std::size_t i = 0; i < kGateKinds; ++i) counts[i] += o.counts[i];
    return *this;
  }
  bool operator==(const GateTally &) const = default;
};

class GateCounter {
 public:
  void add(Gate g) { counts_[static_cast<int>(g)].fetch_add(1, std::memory_order_relaxed); }
  GateTally snapshot() const {
    GateTally t;
    for (std::size_t i = 0; i < kGateKinds; ++i) t.counts[i] = counts_[i].load();
    return t;
  }

 private:
  std::array<std::atomic<std::uint64_t>, kGateKinds> counts_{};
};

/// Simulated wall time of a gate tally on a gate-bootstrapping backend.
struct LatencyModel {
  double gate_seconds = 0.013;  // one bootstrapped binary gate or MUX
  double not_seconds = 0.0;

  double seconds(const GateTally &t) const {
    return gate_seconds * static_cast<double>(t.bootstrapped()) +
           not_seconds * static_cast<double>(t[Gate::kNot]);
  }
};

// ---------------------------------------------------------------------------
// Backend contract

/// Cloud-side evaluation capability: boolean gates over ciphertext bits plus
/// trivial encryptions of constants. A real gate-bootstrapping library can be
/// dropped in by wrapping its cloud key in a type satisfying this concept.
template <typename E>
concept GateEvaluator = requires(E &e, const typename E::Bit &a, bool v) {
  { e.and_(a, a) } -> std::same_as<typename E::Bit>;
  { e.or_(a, a) } -> std::same_as<typename E::Bit>;
  { e.xor_(a, a) } -> std::same_as<typename E::Bit>;
  { e.xnor_(a, a) } -> std::same_as<typename E::Bit>;
  { e.not_(a) } -> std::same_as<typename E::Bit>;
  { e.mux(a, a, a) } -> std::same_as<typename E::Bit>;
  { e.constant(v) } -> std::same_as<typename E::Bit>;
};

template <typename K>
concept BitEncryptor = requires(const K &k, bool v) {
  { k.encrypt(v) } -> std::same_as<typename K::Bit>;
};

template <typename K>
concept BitDecryptor = requires(const K &k, const typename K::Bit &b) {
  { k.decrypt(b) } -> std::same_as<bool>;
};

template <typename Bit>
struct EncryptedWord {
  std::vector<Bit> bits;  // LSB first

  int width() const { return static_cast<int>(bits.size()); }
};

// ---------------------------------------------------------------------------
// Plaintext-simulation backend

/// Tagged plaintext token standing in for an LWE ciphertext.
struct SimBit {
  std::uint64_t key_id = 0;
  std::uint64_t bit_id = 0;
  std::uint8_t payload = 0;
};

namespace detail {

struct SimKeyState {
  std::uint64_t key_id = 0;
  std::atomic<std::uint64_t> next_bit_id{1};
  GateCounter gates;
};

inline SimBit mint(SimKeyState &s, bool v) {
  return {s.key_id, s.next_bit_id.fetch_add(1, std::memory_order_relaxed),
          static_cast<std::uint8_t>(v ? 1 : 0)};
}

}  // namespace detail

/// Evaluation key. Can encrypt (public material) and evaluate gates; it has
/// no decryption path.
class SimCloudKey {
 public:
  using Bit = SimBit;

  SimCloudKey() = default;
  explicit SimCloudKey(std::uint64_t key_id)
      : state_(std::make_shared<detail::SimKeyState>()) {
    state_->key_id = key_id;
    // Distinct holders of the same key mint disjoint id ranges.
    std::random_device rd;
    state_->next_bit_id = (std::uint64_t{rd()} << 32) | 1u;
  }

  std::uint64_t key_id() const { return state_->key_id; }
  bool valid() const { return state_ != nullptr; }

  /// Fresh key object with the same id and its own gate counter.
  SimCloudKey fork() const { return SimCloudKey(key_id()); }

  Bit encrypt(bool v) const { return detail::mint(*state_, v); }
  Bit constant(bool v) { return detail::mint(*state_, v); }

  Bit and_(const Bit &a, const Bit &b) { return gate(Gate::kAnd, a, b, a.payload & b.payload); }
  Bit or_(const Bit &a, const Bit &b) { return gate(Gate::kOr, a, b, a.payload | b.payload); }
  Bit xor_(const Bit &a, const Bit &b) { return gate(Gate::kXor, a, b, a.payload ^ b.payload); }
  Bit xnor_(const Bit &a, const Bit &b) {
    return gate(Gate::kXnor, a, b, 1 ^ (a.payload ^ b.payload));
  }
  Bit not_(const Bit &a) {
    check(a);
    state_->gates.add(Gate::kNot);
    return detail::mint(*state_, a.payload == 0);
  }
  /// sel ? a : b
  Bit mux(const Bit &sel, const Bit &a, const Bit &b) {
    check(sel);
    check(a);
    check(b);
    state_->gates.add(Gate::kMux);
    return detail::mint(*state_, sel.payload != 0 ? a.payload != 0 : b.payload != 0);
  }

  GateTally gate_counts() const { return state_->gates.snapshot(); }

 private:
  void check(const Bit &a) const {
    if (a.key_id != state_->key_id) {
      throw InputError("gate input encrypted under a different key");
    }
  }
  Bit gate(Gate g, const Bit &a, const Bit &b, int v) {
    check(a);
    check(b);
    state_->gates.add(g);
    return detail::mint(*state_, v != 0);
  }

  std::shared_ptr<detail::SimKeyState> state_;
};

class SimSecretKey {
 public:
  using Bit = SimBit;

  SimSecretKey() = default;
  explicit SimSecretKey(std::uint64_t key_id)
      : state_(std::make_shared<detail::SimKeyState>()) {
    state_->key_id = key_id;
  }

  std::uint64_t key_id() const { return state_->key_id; }

  Bit encrypt(bool v) const { return detail::mint(*state_, v); }

  bool decrypt(const Bit &b) const {
    if (b.key_id != state_->key_id) {
      throw InputError("decrypt: ciphertext belongs to a different key");
    }
    if (b.payload > 1) throw InputError("decrypt: malformed ciphertext");
    return b.payload == 1;
  }

 private:
  std::shared_ptr<detail::SimKeyState> state_;
};

struct SimKeyPair {
  SimSecretKey secret;
  SimCloudKey cloud;
};

struct PlainSimBackend {
  static constexpr const char *kId = "plainsim";
  using Bit = SimBit;
  using SecretKey = SimSecretKey;
  using CloudKey = SimCloudKey;

  static SimKeyPair keygen(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uint64_t id = 0;
    while (id == 0) id = rng();
    return {SimSecretKey(id), SimCloudKey(id)};
  }

  static SimKeyPair keygen() {
    std::random_device rd;
    return keygen((std::uint64_t{rd()} << 32) ^ rd());
  }
};

static_assert(GateEvaluator<SimCloudKey>);
static_assert(BitEncryptor<SimCloudKey>);
static_assert(BitEncryptor<SimSecretKey>);
static_assert(BitDecryptor<SimSecretKey>);

// ---------------------------------------------------------------------------
// Word-level helpers

template <BitEncryptor K>
EncryptedWord<typename K::Bit> encrypt_integer(std::uint64_t v, int n_b,
                                               const K &key) {
  EncryptedWord<typename K::Bit> w;
  for (std::uint8_t b : bit_decompose(v, n_b)) w.bits.push_back(key.encrypt(b != 0));
  return w;
}

/// Bitwise encryption of encode_unit_interval(m, n_b).
template <BitEncryptor K>
EncryptedWord<typename K::Bit> encrypt_word(double m, int n_b, const K &key) {
  return encrypt_integer(encode_unit_interval(m, n_b), n_b, key);
}

template <BitDecryptor K>
std::uint64_t decrypt_word(const EncryptedWord<typename K::Bit> &w,
                           const K &key) {
  std::vector<std::uint8_t> bits;
  for (const auto &b : w.bits) bits.push_back(key.decrypt(b) ? 1 : 0);
  return bit_recompose(bits);
}

// ---------------------------------------------------------------------------
// Circuits

template <typename Bit>
void check_same_width(const EncryptedWord<Bit> &a, const EncryptedWord<Bit> &b) {
  if (a.width() != b.width() || a.width() == 0) {
    throw InputError("circuit: word widths differ or are zero");
  }
}

/// Encrypted [int(a) < int(b)]. Scans MSB to LSB:
///   lt <- lt OR (eq AND NOT a_i AND b_i),  eq <- eq AND XNOR(a_i, b_i).
/// 5 bootstrapped gates and one NOT per bit, independent of the data.
template <GateEvaluator E>
typename E::Bit circuit_less_than(E &e, const EncryptedWord<typename E::Bit> &a,
                                  const EncryptedWord<typename E::Bit> &b) {
  check_same_width(a, b);
  auto lt = e.constant(false);
  auto eq = e.constant(true);
  for (int i = a.width() - 1; i >= 0; --i) {
    const auto same = e.xnor_(a.bits[i], b.bits[i]);
    const auto below = e.and_(e.not_(a.bits[i]), b.bits[i]);
    lt = e.or_(lt, e.and_(eq, below));
    eq = e.and_(eq, same);
  }
  return lt;
}

/// Encrypted [int(a) == int(b)].
template <GateEvaluator E>
typename E::Bit circuit_equal(E &e, const EncryptedWord<typename E::Bit> &a,
                              const EncryptedWord<typename E::Bit> &b) {
  check_same_width(a, b);
  auto eq = e.constant(true);
  for (int i = 0; i < a.width(); ++i) eq = e.and_(eq, e.xnor_(a.bits[i], b.bits[i]));
  return eq;
}

/// Bitwise MUX(a < b, a, b).
template <GateEvaluator E>
EncryptedWord<typename E::Bit> circuit_min(E &e,
                                           const EncryptedWord<typename E::Bit> &a,
                                           const EncryptedWord<typename E::Bit> &b) {
  const auto lt = circuit_less_than(e, a, b);
  EncryptedWord<typename E::Bit> out;
  for (int i = 0; i < a.width(); ++i) out.bits.push_back(e.mux(lt, a.bits[i], b.bits[i]));
  return out;
}

/// One-hot selector of the smallest index attaining the minimum:
/// running min over the words, per-word equality with it, then
/// onehot_k = eq_k AND NOT(onehot_1 OR ... OR onehot_{k-1}).
/// A single word yields a constant 1 without any comparator gates.
template <GateEvaluator E>
std::vector<typename E::Bit> circuit_argmin_onehot(
    E &e, const std::vector<EncryptedWord<typename E::Bit>> &words) {
  if (words.empty()) throw InputError("argmin: no words");
  for (const auto &w : words) check_same_width(words.front(), w);
  if (words.size() == 1) return {e.constant(true)};

  auto m = words.front();
  for (std::size_t k = 1; k < words.size(); ++k) m = circuit_min(e, m, words[k]);

  std::vector<typename E::Bit> onehot;
  onehot.push_back(circuit_equal(e, words.front(), m));
  auto taken = onehot.front();
  for (std::size_t k = 1; k < words.size(); ++k) {
    const auto eq = circuit_equal(e, words[k], m);
    onehot.push_back(e.and_(eq, e.not_(taken)));
    if (k + 1 < words.size()) taken = e.or_(taken, onehot.back());
  }
  return onehot;
}

/// Index of the first minimum over plain integers; the reference for the
/// circuits above.
inline std::size_t plain_argmin(const std::vector<std::uint64_t> &v) {
  if (v.empty()) throw InputError("argmin: no values");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] < v[best]) best = k;
  }
  return best;
}

}  // namespace mmfhe::fhe

#endif  // MMFHE_GATES_HPP_
