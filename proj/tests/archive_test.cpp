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

#include "mmfhe/archive.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "support/blobs.hpp"

namespace mmfhe {
namespace {

namespace fs = std::filesystem;

using testing::filled;
using testing::gaussian_blob;

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("mmfhe_archive_" + name);
  fs::remove_all(p);
  return p;
}

PartyArchive small_archive() {
  PartyArchive a;
  a.hyper.l_count = 3;
  a.hyper.n = 2;
  a.hyper.r_grid = {0.2, 0.5};
  a.hyper.part_size = 40;
  a.hyper.membership = {MembershipKind::student_t, 2.5};
  a.hyper.n_b = 8;
  const WideCdmmaConfig cfg = a.hyper.wide_config();
  for (int c = 0; c < 3; ++c) {
    const MatrixXd rows = gaussian_blob(60 + 10 * c, filled(3, 2.0 * c), 0.5, 100 + c);
    a.attributes.push_back({learn_wide_cdmma(rows, cfg), a.hyper.membership, 10 + c});
    a.class_counts.push_back(rows.rows());
  }
  return a;
}

void expect_same_model(const WideCdmmaModel &a, const WideCdmmaModel &b) {
  ASSERT_EQ(a.size(), b.size());
  for (Index s = 0; s < a.size(); ++s) {
    const auto &x = a.submodels[s];
    const auto &y = b.submodels[s];
    ASSERT_EQ(x.n_layers(), y.n_layers());
    for (std::size_t l = 0; l < x.layers.size(); ++l) {
      EXPECT_EQ(x.projections[l], y.projections[l]);
      EXPECT_EQ(x.layers[l].alpha, y.layers[l].alpha);
      EXPECT_EQ(x.layers[l].inducing, y.layers[l].inducing);
      EXPECT_EQ(x.layers[l].kernel.weights, y.layers[l].kernel.weights);
      EXPECT_EQ(x.layers[l].kernel.sigma2, y.layers[l].kernel.sigma2);
      EXPECT_EQ(x.layers[l].nu, y.layers[l].nu);
      EXPECT_EQ(x.layers[l].beta_inv, y.layers[l].beta_inv);
    }
  }
}

TEST(Archive, ModelBytesRoundTrip) {
  const PartyArchive a = small_archive();
  for (const auto &attr : a.attributes) {
    const std::string bytes = serialize_model(attr.model);
    expect_same_model(attr.model, deserialize_model(bytes));
    EXPECT_EQ(serialize_model(deserialize_model(bytes)), bytes);
  }
}

TEST(Archive, DirectoryRoundTripPredictsIdentically) {
  const PartyArchive a = small_archive();
  const fs::path dir = scratch("roundtrip");
  save_archive(a, dir);
  const PartyArchive b = load_archive(dir);
  ASSERT_EQ(b.attributes.size(), 3u);
  EXPECT_EQ(b.class_counts, a.class_counts);
  EXPECT_EQ(b.hyper.l_count, 3);
  EXPECT_EQ(b.hyper.r_grid, a.hyper.r_grid);
  EXPECT_EQ(b.hyper.n_b, 8);
  EXPECT_EQ(b.hyper.membership.kind, MembershipKind::student_t);
  EXPECT_EQ(b.hyper.membership.nu, 2.5);
  const MatrixXd probes = gaussian_blob(100, filled(3, 2.0), 2.0, 200);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(b.attributes[c].label, a.attributes[c].label);
    expect_same_model(a.attributes[c].model, b.attributes[c].model);
    for (Index i = 0; i < probes.rows(); ++i) {
      const VectorXd y = probes.row(i).transpose();
      const FilterResult fa = wide_filter(y, a.attributes[c].model);
      const FilterResult fb = wide_filter(y, b.attributes[c].model);
      ASSERT_EQ(fa.output, fb.output);
      ASSERT_EQ(attribute_membership(y, a.attributes[c]), attribute_membership(y, b.attributes[c]));
    }
  }
  fs::remove_all(dir);
}

TEST(Archive, ManifestFields) {
  const PartyArchive a = small_archive();
  const auto m = manifest_json(a);
  EXPECT_EQ(m["format"], "mmfhe-party-archive");
  EXPECT_EQ(m["version"], 1);
  EXPECT_EQ(m["n_b"], 8);
  EXPECT_EQ(m["hyper"]["L"], 3);
  EXPECT_EQ(m["classes"].size(), 3u);
  EXPECT_EQ(m["classes"][1]["file"], "class_1.bin");
  EXPECT_EQ(m["classes"][1]["label"], 11);
}

TEST(Archive, LittleEndianLayout) {
  WideCdmmaModel m;
  CdmmaModel sub;
  sub.projections.push_back(MatrixXd::Identity(1, 1));
  sub.layers.push_back(testing::constant_layer(1, filled(1, 1.0)));
  m.submodels.push_back(sub);
  const std::string b = serialize_model(m);
  ASSERT_GE(b.size(), 16u);
  EXPECT_EQ(b.substr(0, 4), "MMFA");
  EXPECT_EQ(b.substr(4, 4), std::string("\x01\0\0\0", 4));
  EXPECT_EQ(b.substr(8, 8), std::string("\x01\0\0\0\0\0\0\0", 8));
}

TEST(Archive, CorruptInputsRejected) {
  const PartyArchive a = small_archive();
  const std::string bytes = serialize_model(a.attributes[0].model);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 3)), InputError);
  EXPECT_THROW(deserialize_model(bytes + "x"), InputError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), InputError);
  EXPECT_THROW(deserialize_model(""), InputError);

  const fs::path dir = scratch("corrupt");
  EXPECT_THROW(load_archive(dir), InputError);
  save_archive(a, dir);
  fs::remove(dir / "class_2.bin");
  EXPECT_THROW(load_archive(dir), InputError);
  std::ofstream(dir / "manifest.json") << "{\"format\": \"other\"}";
  EXPECT_THROW(load_archive(dir), InputError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace mmfhe
