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

#ifndef MMFHE_DATASET_HPP_
#define MMFHE_DATASET_HPP_

#include <zlib.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmfhe/errors.hpp"

namespace mmfhe {

struct Dataset {
  Eigen::MatrixXd features;  // one sample per row
  std::vector<int> labels;
  std::vector<int> groups;  // optional per-row party tag (by-column partition)

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

// ---------------------------------------------------------------------------
// IDX

/// Reads a whole file; transparently gunzips (zlib detects the header).
inline std::vector<unsigned char> read_file_bytes(const std::string &path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw InputError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int got = 0;
  while ((got = gzread(f, buf, sizeof(buf))) > 0) {
    out.insert(out.end(), buf, buf + got);
  }
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw InputError("read error in " + path);
  return out;
}

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> data;  // unsigned-byte payload
};

inline std::uint32_t read_be32(const unsigned char *p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

/// Parses an unsigned-byte IDX file. `expected_magic` is e.g. 0x00000803 for
/// rank-3 image stacks and 0x00000801 for label vectors.
inline IdxArray parse_idx(const std::vector<unsigned char> &bytes,
                          std::uint32_t expected_magic) {
  if (bytes.size() < 4) throw InputError("idx: truncated header");
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != expected_magic) {
    throw InputError("idx: magic mismatch");
  }
  const std::size_t rank = magic & 0xffu;
  if (((magic >> 8) & 0xffu) != 0x08u) {
    throw InputError("idx: only unsigned-byte payloads are supported");
  }
  if (bytes.size() < 4 + 4 * rank) throw InputError("idx: truncated dims");
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    out.dims.push_back(read_be32(bytes.data() + 4 + 4 * d));
    count *= out.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() != offset + count) throw InputError("idx: payload size");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.end());
  return out;
}

/// Images are flattened row-major (28 x 28 -> 784). Pixel values stay raw.
inline Dataset read_idx_dataset(const std::string &images_path,
                                const std::string &labels_path) {
  const IdxArray img = parse_idx(read_file_bytes(images_path), 0x00000803);
  const IdxArray lab = parse_idx(read_file_bytes(labels_path), 0x00000801);
  if (img.dims[0] != lab.dims[0]) {
    throw InputError("idx: image and label counts differ");
  }
  const Eigen::Index n = img.dims[0];
  const Eigen::Index p = Eigen::Index{img.dims[1]} * img.dims[2];
  Dataset ds;
  ds.features.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < p; ++k) {
      ds.features(i, k) = img.data[static_cast<std::size_t>(i * p + k)];
    }
  }
  ds.labels.assign(lab.data.begin(), lab.data.end());
  return ds;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

/// Splits CSV text into records. Handles quoted fields, doubled quotes,
/// embedded separators/newlines and CRLF line endings.
inline std::vector<std::vector<std::string>> parse_csv(const std::string &text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CsvLayout {
  bool header = true;
  int label_column = -1;  // negative counts from the end
  int group_column = -2;  // set to a column index for by-column partitions;
                          // kNoGroup disables
  static constexpr int kNoGroup = -1000;
};

inline double parse_number(const std::string &s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception &) {
    throw InputError("csv: not a number: '" + s + "'");
  }
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  if (pos != s.size()) throw InputError("csv: not a number: '" + s + "'");
  return v;
}

inline Dataset read_csv_dataset(const std::string &path,
                                CsvLayout layout = {}) {
  const auto bytes = read_file_bytes(path);
  auto rows = parse_csv(std::string(bytes.begin(), bytes.end()));
  if (layout.header && !rows.empty()) rows.erase(rows.begin());
  if (rows.empty()) throw InputError("csv: no data rows in " + path);
  const int width = static_cast<int>(rows.front().size());
  auto resolve = [width](int c) { return c < 0 ? width + c : c; };
  const int label_col = resolve(layout.label_column);
  const bool has_group = layout.group_column != CsvLayout::kNoGroup;
  const int group_col = has_group ? resolve(layout.group_column) : -1;
  if (label_col < 0 || label_col >= width ||
      (has_group && (group_col < 0 || group_col >= width ||
                     group_col == label_col))) {
    throw InputError("csv: label/group column out of range");
  }
  const int n_feat = width - 1 - (has_group ? 1 : 0);
  if (n_feat < 1) throw InputError("csv: no feature columns");

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), n_feat);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != width) {
      throw InputError("csv: ragged row " + std::to_string(i + 1));
    }
    Eigen::Index k = 0;
    for (int c = 0; c < width; ++c) {
      if (c == label_col) {
        ds.labels.push_back(static_cast<int>(std::lround(parse_number(rows[i][c]))));
      } else if (c == group_col) {
        ds.groups.push_back(static_cast<int>(std::lround(parse_number(rows[i][c]))));
      } else {
        ds.features(static_cast<Eigen::Index>(i), k++) = parse_number(rows[i][c]);
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Normalization, splitting, subsampling

enum class Normalization { none, divide255, zscore };

inline Normalization normalization_from_string(const std::string &s) {
  if (s == "none") return Normalization::none;
  if (s == "divide255") return Normalization::divide255;
  if (s == "zscore") return Normalization::zscore;
  throw InputError("unknown normalization: " + s);
}

/// Per-column statistics so that a test set can reuse the training moments.
struct ZScore {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;

  static ZScore fit(const Eigen::MatrixXd &x) {
    ZScore z;
    z.mean = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - z.mean;
    z.std = (c.colwise().squaredNorm() / static_cast<double>(x.rows()))
                .cwiseSqrt();
    for (Eigen::Index k = 0; k < z.std.size(); ++k) {
      if (!(z.std[k] > 0.0)) z.std[k] = 1.0;
    }
    return z;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd &x) const {
    return (x.rowwise() - mean).array().rowwise() / std.array();
  }
};

inline void normalize(Dataset &ds, Normalization how) {
  switch (how) {
    case Normalization::none:
      break;
    case Normalization::divide255:
      ds.features /= 255.0;
      break;
    case Normalization::zscore:
      ds.features = ZScore::fit(ds.features).apply(ds.features);
      break;
  }
}

inline Dataset select(const Dataset &ds, const std::vector<Eigen::Index> &idx) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(idx[i]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(idx[i])]);
    if (!ds.groups.empty()) {
      out.groups.push_back(ds.groups[static_cast<std::size_t>(idx[i])]);
    }
  }
  return out;
}

/// Seeded shuffle, then the first `train_fraction` of rows become the
/// training set.
inline std::pair<Dataset, Dataset> split(const Dataset &ds,
                                         double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("split: train fraction must lie in (0, 1)");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(order.size())));
  std::vector<Eigen::Index> tr(order.begin(), order.begin() + n_train);
  std::vector<Eigen::Index> te(order.begin() + n_train, order.end());
  return {select(ds, tr), select(ds, te)};
}

/// Seeded subsample of `count` rows (all rows when count >= size), kept in
/// original order.
inline Dataset subsample(const Dataset &ds, Eigen::Index count,
                         std::uint64_t seed) {
  if (count <= 0 || count >= ds.size()) return ds;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return select(ds, order);
}

// ---------------------------------------------------------------------------
// Party partitions

/// Assigns each training row to a party (0-based).
struct PartitionSpec {
  enum class Kind { odd_even_digits, class_ranges, by_column } kind =
      Kind::odd_even_digits;
  // class_ranges: party k owns labels [ranges[k].first, ranges[k].second].
  std::vector<std::pair<int, int>> ranges;
};

/// Parses "odd-even-digits", "by-column", or "class-ranges:0-9,10-19,20-24".
inline PartitionSpec partition_from_string(const std::string &s) {
  PartitionSpec p;
  if (s == "odd-even-digits") return p;
  if (s == "by-column") {
    p.kind = PartitionSpec::Kind::by_column;
    return p;
  }
  const std::string prefix = "class-ranges:";
  if (s.rfind(prefix, 0) != 0) throw InputError("unknown partition: " + s);
  p.kind = PartitionSpec::Kind::class_ranges;
  std::string rest = s.substr(prefix.size());
  std::size_t start = 0;
  while (start <= rest.size()) {
    const std::size_t comma = rest.find(',', start);
    const std::string item = rest.substr(start, comma - start);
    const std::size_t dash = item.find('-');
    if (dash == std::string::npos) throw InputError("bad class range: " + item);
    p.ranges.emplace_back(std::stoi(item.substr(0, dash)),
                          std::stoi(item.substr(dash + 1)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (std::size_t a = 0; a < p.ranges.size(); ++a) {
    if (p.ranges[a].first > p.ranges[a].second) {
      throw InputError("class range is empty");
    }
    for (std::size_t b = a + 1; b < p.ranges.size(); ++b) {
      if (p.ranges[a].first <= p.ranges[b].second &&
          p.ranges[b].first <= p.ranges[a].second) {
        throw InputError("class ranges overlap");
      }
    }
  }
  return p;
}

/// Party A (index 0) owns odd digits, party B (index 1) the even ones.
inline std::vector<Dataset> partition(const Dataset &ds,
                                      const PartitionSpec &spec) {
  std::map<int, std::vector<Eigen::Index>> by_party;
  std::size_t n_parties = 0;
  switch (spec.kind) {
    case PartitionSpec::Kind::odd_even_digits:
      n_parties = 2;
      for (Eigen::Index i = 0; i < ds.size(); ++i) {
        by_party[ds.labels[i] % 2 == 1 ? 0 : 1].push_back(i);
      }
      break;
    case PartitionSpec::Kind::class_ranges:
      n_parties = spec.ranges.size();
      for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const int lab = ds.labels[i];
        bool placed = false;
        for (std::size_t k = 0; k < spec.ranges.size(); ++k) {
          if (lab >= spec.ranges[k].first && lab <= spec.ranges[k].second) {
            by_party[static_cast<int>(k)].push_back(i);
            placed = true;
            break;
          }
        }
        if (!placed) {
          throw InputError("class ranges do not cover label " +
                           std::to_string(lab));
        }
      }
      break;
    case PartitionSpec::Kind::by_column: {
      if (ds.groups.size() != static_cast<std::size_t>(ds.size())) {
        throw InputError("by-column partition needs a group column");
      }
      std::set<int> tags(ds.groups.begin(), ds.groups.end());
      std::map<int, int> rank;
      for (int t : tags) rank[t] = static_cast<int>(rank.size());
      n_parties = tags.size();
      for (Eigen::Index i = 0; i < ds.size(); ++i) {
        by_party[rank[ds.groups[i]]].push_back(i);
      }
      break;
    }
  }
  std::vector<Dataset> out;
  for (std::size_t k = 0; k < n_parties; ++k) {
    out.push_back(select(ds, by_party[static_cast<int>(k)]));
  }
  return out;
}

/// Rows of `ds` with the given label.
inline Eigen::MatrixXd class_rows(const Dataset &ds, int label) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == label) idx.push_back(i);
  }
  return select(ds, idx).features;
}

inline std::vector<int> distinct_labels(const Dataset &ds) {
  std::set<int> s(ds.labels.begin(), ds.labels.end());
  return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------
// Ingestion

struct DatasetSpec {
  // Either an IDX image/label pair or a CSV file.
  std::string idx_images;
  std::string idx_labels;
  std::string csv;
  CsvLayout csv_layout;
  Normalization normalization = Normalization::divide255;
  double train_fraction = 1.0;  // test fraction is the remainder
  Eigen::Index subsample = 0;   // 0 keeps every row
  std::uint64_t seed = 1;
  PartitionSpec partition;
};

/// Reads, subsamples and normalizes the data described by `spec`.
inline Dataset ingest(const DatasetSpec &spec) {
  const bool idx = !spec.idx_images.empty() || !spec.idx_labels.empty();
  if (idx == !spec.csv.empty()) {
    throw InputError("ingest: give either IDX images+labels or a CSV file");
  }
  if (idx && (spec.idx_images.empty() || spec.idx_labels.empty())) {
    throw InputError("ingest: IDX input needs both images and labels");
  }
  Dataset ds = idx ? read_idx_dataset(spec.idx_images, spec.idx_labels)
                   : read_csv_dataset(spec.csv, spec.csv_layout);
  ds = subsample(ds, spec.subsample, spec.seed);
  normalize(ds, spec.normalization);
  return ds;
}

/// (train, test); the test set is empty when train_fraction is 1.
inline std::pair<Dataset, Dataset> ingest_split(const DatasetSpec &spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw InputError("ingest: train fraction must lie in (0, 1]");
  }
  Dataset ds = ingest(spec);
  if (spec.train_fraction == 1.0) {
    Dataset empty;
    empty.features.resize(0, ds.dim());
    return {std::move(ds), std::move(empty)};
  }
  return split(ds, spec.train_fraction, spec.seed);
}

}  // namespace mmfhe

#endif  // MMFHE_DATASET_HPP_
