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

#ifndef MMFHE_ARCHIVE_HPP_
#define MMFHE_ARCHIVE_HPP_

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfhe/cdmma.hpp"
#include "mmfhe/errors.hpp"
#include "mmfhe/fuzzy.hpp"

namespace mmfhe {

inline constexpr const char *kArchiveFormat = "mmfhe-party-archive";
inline constexpr int kArchiveVersion = 1;

/// Training hyperparameters recorded alongside a party's models.
struct TrainHyper {
  Index l_count = 5;
  Index n = 20;
  std::vector<double> r_grid{0.5};
  Index part_size = 1000;
  double nu = 2.1;
  std::uint64_t seed = KMeansConfig{}.seed;
  MembershipFunction membership;
  int n_b = 16;
  std::string normalization = "divide255";

  WideCdmmaConfig wide_config() const {
    WideCdmmaConfig c;
    c.l_count = l_count;
    c.n = n;
    c.r_grid = r_grid;
    c.part_size = part_size;
    c.learn.nu = nu;
    c.learn.kmeans.seed = seed;
    return c;
  }
};

struct PartyArchive {
  TrainHyper hyper;
  AttributeBank attributes;
  std::vector<Index> class_counts;  // training rows per attribute
};

namespace detail {

class BinWriter {
 public:
  void u32(std::uint32_t v) { raw(v, 4); }
  void u64(std::uint64_t v) { raw(v, 8); }
  void f64(double v) { raw(std::bit_cast<std::uint64_t>(v), 8); }
  void matrix(const MatrixXd &m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }
  const std::string &bytes() const { return buf_; }

 private:
  void raw(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class BinReader {
 public:
  explicit BinReader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  double f64() { return std::bit_cast<double>(raw(8)); }
  MatrixXd matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (r > (1u << 26) || c > (1u << 26) || r * c * 8 > buf_.size() - pos_) {
      throw InputError("archive: matrix shape exceeds file");
    }
    MatrixXd m(static_cast<Index>(r), static_cast<Index>(c));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    }
    return m;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::uint64_t raw(int n) {
    if (buf_.size() - pos_ < static_cast<std::size_t>(n)) {
      throw InputError("archive: truncated model file");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= std::uint64_t{static_cast<unsigned char>(buf_[pos_ + i])} << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kModelMagic = 0x41464d4d;  // "MMFA"

inline void write_layer(BinWriter &w, const MembershipMappingModel &m) {
  w.matrix(m.alpha);
  w.matrix(m.inducing);
  w.f64(m.kernel.sigma2);
  w.matrix(m.kernel.weights);
  w.f64(m.nu);
  w.f64(m.beta_inv);
}

inline MembershipMappingModel read_layer(BinReader &r) {
  MembershipMappingModel m;
  m.alpha = r.matrix();
  m.inducing = r.matrix();
  m.kernel.sigma2 = r.f64();
  const MatrixXd w = r.matrix();
  if (w.cols() != 1 || w.rows() != m.inducing.cols() || m.alpha.rows() != m.inducing.rows()) {
    throw InputError("archive: inconsistent layer shapes");
  }
  m.kernel.weights = w.col(0);
  m.nu = r.f64();
  m.beta_inv = r.f64();
  return m;
}

}  // namespace detail

/// Binary form of one wide CDMMA: little-endian u32/u64/f64, matrices as
/// (rows u64, cols u64, row-major f64 values).
inline std::string serialize_model(const WideCdmmaModel &model) {
  detail::BinWriter w;
  w.u32(detail::kModelMagic);
  w.u32(kArchiveVersion);
  w.u64(static_cast<std::uint64_t>(model.size()));
  for (const auto &sub : model.submodels) {
    w.u64(static_cast<std::uint64_t>(sub.n_layers()));
    for (Index l = 0; l < sub.n_layers(); ++l) {
      w.matrix(sub.projections[static_cast<std::size_t>(l)]);
      detail::write_layer(w, sub.layers[static_cast<std::size_t>(l)]);
    }
  }
  return w.bytes();
}

inline WideCdmmaModel deserialize_model(std::string bytes) {
  detail::BinReader r(std::move(bytes));
  if (r.u32() != detail::kModelMagic) throw InputError("archive: bad model magic");
  if (r.u32() != static_cast<std::uint32_t>(kArchiveVersion)) {
    throw InputError("archive: unsupported model version");
  }
  WideCdmmaModel model;
  const std::uint64_t s = r.u64();
  for (std::uint64_t i = 0; i < s; ++i) {
    CdmmaModel sub;
    const std::uint64_t layers = r.u64();
    for (std::uint64_t l = 0; l < layers; ++l) {
      sub.projections.push_back(r.matrix());
      sub.layers.push_back(detail::read_layer(r));
    }
    if (sub.layers.empty()) throw InputError("archive: submodel without layers");
    model.submodels.push_back(std::move(sub));
  }
  if (model.submodels.empty() || !r.done()) throw InputError("archive: malformed model file");
  return model;
}

inline nlohmann::json manifest_json(const PartyArchive &a) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < a.attributes.size(); ++c) {
    classes.push_back({{"label", a.attributes[c].label},
                       {"file", "class_" + std::to_string(c) + ".bin"},
                       {"n_train", c < a.class_counts.size() ? a.class_counts[c] : 0}});
  }
  const auto &h = a.hyper;
  return {{"format", kArchiveFormat},
          {"version", kArchiveVersion},
          {"n_b", h.n_b},
          {"seed", h.seed},
          {"normalization", h.normalization},
          {"hyper",
           {{"L", h.l_count}, {"n", h.n}, {"r_grid", h.r_grid},
            {"part_size", h.part_size}, {"nu", h.nu}}},
          {"membership",
           {{"kind", to_string(h.membership.kind)}, {"nu", h.membership.nu}}},
          {"classes", classes}};
}

inline void save_archive(const PartyArchive &a, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  const auto manifest = manifest_json(a);
  for (std::size_t c = 0; c < a.attributes.size(); ++c) {
    std::ofstream f(dir / manifest["classes"][c]["file"].get<std::string>(), std::ios::binary);
    const std::string bytes = serialize_model(a.attributes[c].model);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("archive: cannot write " + dir.string());
  }
  std::ofstream m(dir / "manifest.json");
  m << manifest.dump(2) << '\n';
  if (!m) throw InputError("archive: cannot write manifest in " + dir.string());
}

inline PartyArchive load_archive(const std::filesystem::path &dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw InputError("archive: no manifest in " + dir.string());
  const auto j = nlohmann::json::parse(mf, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != kArchiveFormat) {
    throw InputError("archive: not a party archive: " + dir.string());
  }
  if (j.value("version", 0) != kArchiveVersion) throw InputError("archive: unsupported version");

  PartyArchive a;
  try {
    auto &h = a.hyper;
    h.n_b = j.at("n_b").get<int>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.normalization = j.at("normalization").get<std::string>();
    const auto &hp = j.at("hyper");
    h.l_count = hp.at("L").get<Index>();
    h.n = hp.at("n").get<Index>();
    h.r_grid = hp.at("r_grid").get<std::vector<double>>();
    h.part_size = hp.at("part_size").get<Index>();
    h.nu = hp.at("nu").get<double>();
    h.membership.kind = membership_kind_from_string(j.at("membership").at("kind").get<std::string>());
    h.membership.nu = j.at("membership").at("nu").get<double>();
    for (const auto &c : j.at("classes")) {
      std::ifstream f(dir / c.at("file").get<std::string>(), std::ios::binary);
      if (!f) throw InputError("archive: missing model file " + c.at("file").get<std::string>());
      std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      FuzzyAttribute attr{deserialize_model(std::move(bytes)), h.membership,
                          c.at("label").get<int>()};
      a.attributes.push_back(std::move(attr));
      a.class_counts.push_back(c.value("n_train", Index{0}));
    }
  } catch (const nlohmann::json::exception &e) {
    throw InputError(std::string("archive: bad manifest: ") + e.what());
  }
  if (a.attributes.empty()) throw InputError("archive: no classes");
  return a;
}

}  // namespace mmfhe

#endif  // MMFHE_ARCHIVE_HPP_
