#pragma once

// Synthetic trimodal data, the dataset CSV format and seeded splitting /
// batching.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "jiadf/error.hpp"
#include "jiadf/record.hpp"

namespace jiadf::data {

struct DatasetSpec {
  std::vector<std::size_t> counts{100, 100, 100};  // per class
  std::size_t clinical_dim = 16;
  std::size_t dermoscopic_dim = 16;
  std::size_t metadata_dim = 16;
  double snr_clinical = 3.0;
  double snr_dermoscopic = 3.0;
  double snr_metadata = 3.0;
  bool complementary = false;
  // Per class, this fraction (rounded down) is tagged "test"; the rest "unsplit".
  double test_fraction = 0.0;
  std::uint64_t seed = 0;

  std::size_t classes() const { return counts.size(); }

  void validate() const {
    if (counts.size() < 2) throw DataError("dataset spec needs at least 2 classes");
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (counts[i] == 0) throw DataError("class " + std::to_string(i) + " has a zero sample count");
    if (!clinical_dim || !dermoscopic_dim || !metadata_dim) throw DataError("feature widths must be positive");
    for (double s : {snr_clinical, snr_dermoscopic, snr_metadata})
      if (!(s >= 0.0) || !std::isfinite(s)) throw DataError("snr values must be finite and non-negative");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw DataError("test fraction must lie in [0, 1)");
  }
};

struct DatasetTable {
  std::size_t clinical_dim = 0;
  std::size_t dermoscopic_dim = 0;
  std::size_t metadata_dim = 0;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }

  std::vector<Record> select(Split s) const {
    std::vector<Record> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(r);
    return out;
  }

  std::size_t max_label() const {
    std::size_t m = 0;
    for (const auto& r : records) m = std::max(m, r.label);
    return m;
  }

  void validate() const {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second) throw DataError("duplicate record id " + std::to_string(r.id));
      if (r.clinical.size() != clinical_dim || r.dermoscopic.size() != dermoscopic_dim ||
          r.metadata.size() != metadata_dim) {
        throw DataError("record " + std::to_string(r.id) + " does not match the table widths");
      }
    }
  }

  friend bool operator==(const DatasetTable&, const DatasetTable&) = default;
};

// In complementary mode, classes 2j and 2j+1 share a metadata mean (separable
// only through the images) while classes 2j-1 and 2j share image means
// (separable only through metadata).
inline std::size_t metadata_group(std::size_t k, bool complementary) { return complementary ? k / 2 : k; }
inline std::size_t image_group(std::size_t k, bool complementary) { return complementary ? (k + 1) / 2 : k; }

struct ClassMeans {
  std::vector<std::vector<double>> clinical, dermoscopic, metadata;  // indexed by class
};

inline ClassMeans class_means(const DatasetSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto draw = [&](std::size_t groups, std::size_t width) {
    std::vector<std::vector<double>> g(groups, std::vector<double>(width));
    for (auto& v : g)
      for (double& x : v) x = unit(rng);
    return g;
  };
  const std::size_t n = spec.classes();
  auto img_c = draw(n, spec.clinical_dim);
  auto img_d = draw(n, spec.dermoscopic_dim);
  auto meta = draw(n, spec.metadata_dim);
  ClassMeans m;
  for (std::size_t k = 0; k < n; ++k) {
    m.clinical.push_back(img_c[image_group(k, spec.complementary)]);
    m.dermoscopic.push_back(img_d[image_group(k, spec.complementary)]);
    m.metadata.push_back(meta[metadata_group(k, spec.complementary)]);
  }
  return m;
}

// Each block is snr * mu_k + N(0, I). Records are emitted class by class.
inline DatasetTable generate(const DatasetSpec& spec) {
  spec.validate();
  const ClassMeans means = class_means(spec);
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  DatasetTable t{spec.clinical_dim, spec.dermoscopic_dim, spec.metadata_dim, {}};
  std::uint64_t id = 0;
  auto block = [&](const std::vector<double>& mu, double snr) {
    std::vector<double> v(mu.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = snr * mu[i] + noise(rng);
    return v;
  };
  for (std::size_t k = 0; k < spec.classes(); ++k) {
    const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(spec.counts[k])));
    for (std::size_t i = 0; i < spec.counts[k]; ++i) {
      Record r;
      r.id = id++;
      r.label = k;
      r.split = i < spec.counts[k] - n_test ? Split::Unsplit : Split::Test;
      r.clinical = block(means.clinical[k], spec.snr_clinical);
      r.dermoscopic = block(means.dermoscopic[k], spec.snr_dermoscopic);
      r.metadata = block(means.metadata[k], spec.snr_metadata);
      t.records.push_back(std::move(r));
    }
  }
  return t;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& os, const DatasetTable& t) {
  os << "id,split,label";
  for (std::size_t i = 0; i < t.clinical_dim; ++i) os << ",c_" << i;
  for (std::size_t i = 0; i < t.dermoscopic_dim; ++i) os << ",d_" << i;
  for (std::size_t i = 0; i < t.metadata_dim; ++i) os << ",m_" << i;
  os << '\n';
  for (const auto& r : t.records) {
    os << r.id << ',' << to_string(r.split) << ',' << r.label;
    for (const auto* block : {&r.clinical, &r.dermoscopic, &r.metadata})
      for (double x : *block) os << ',' << format_double(x);
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const DatasetTable& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_csv(os, t);
  if (!os) throw DataError("failed writing '" + path + "'");
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

// Counts the run of headers named prefix_0, prefix_1, ... starting at pos.
inline std::size_t prefixed_run(const std::vector<std::string_view>& header, std::size_t pos, char prefix) {
  std::size_t n = 0;
  while (pos + n < header.size() && header[pos + n] == std::string(1, prefix) + "_" + std::to_string(n)) ++n;
  return n;
}

template <typename T>
T parse_number(std::string_view cell, std::size_t line, const char* what) {
  T v{};
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
    throw DataError("line " + std::to_string(line) + ": non-numeric " + what + " cell '" + std::string(cell) + "'");
  }
  return v;
}

}  // namespace detail

inline DatasetTable read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("line 1: missing header");
  const auto header = detail::split_commas(line);
  const char* required[] = {"id", "split", "label"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (header.size() <= i || header[i] != required[i]) {
      throw DataError(std::string("line 1: malformed header, expected column '") + required[i] + "' at position " +
                      std::to_string(i));
    }
  }
  DatasetTable t;
  std::size_t pos = 3;
  t.clinical_dim = detail::prefixed_run(header, pos, 'c');
  pos += t.clinical_dim;
  t.dermoscopic_dim = detail::prefixed_run(header, pos, 'd');
  pos += t.dermoscopic_dim;
  t.metadata_dim = detail::prefixed_run(header, pos, 'm');
  pos += t.metadata_dim;
  if (pos != header.size() || !t.clinical_dim || !t.dermoscopic_dim || !t.metadata_dim) {
    throw DataError("line 1: malformed header, expected c_0.., d_0.., m_0.. feature columns");
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    Record r;
    r.id = detail::parse_number<std::uint64_t>(cells[0], lineno, "id");
    try {
      r.split = parse_split(cells[1]);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    r.label = detail::parse_number<std::size_t>(cells[2], lineno, "label");
    std::size_t c = 3;
    auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = detail::parse_number<double>(cells[c++], lineno, "feature");
    };
    fill(r.clinical, t.clinical_dim);
    fill(r.dermoscopic, t.dermoscopic_dim);
    fill(r.metadata, t.metadata_dim);
    t.records.push_back(std::move(r));
  }
  t.validate();
  return t;
}

inline DatasetTable load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset '" + path + "'");
  return read_csv(is);
}

// Stratified 80/20 (by default) split of the untagged and train-tagged
// records; test records are left alone. Per class, ceil(fraction * n) go to
// train. Classes with fewer than two samples go entirely to train.
inline DatasetTable split_train_val(DatasetTable t, double fraction = 0.8, std::uint64_t seed = 0,
                                    std::vector<std::string>* warnings = nullptr) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("train fraction must lie in (0, 1]");
  const std::size_t classes = t.records.empty() ? 0 : t.max_label() + 1;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < t.records.size(); ++i) {
      const Record& r = t.records[i];
      if (r.label == k && (r.split == Split::Unsplit || r.split == Split::Train || r.split == Split::Val)) {
        idx.push_back(i);
      }
    }
    if (idx.empty()) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
    if (idx.size() < 2) {
      n_train = idx.size();
      if (warnings) warnings->push_back("class " + std::to_string(k) + " has fewer than 2 samples; all go to train");
    }
    for (std::size_t j = 0; j < idx.size(); ++j) t.records[idx[j]].split = j < n_train ? Split::Train : Split::Val;
  }
  return t;
}

// Per-epoch seeded shuffle into batches of batch_size; the last batch may be
// short.
inline std::vector<std::vector<Record>> batch_iter(const std::vector<Record>& train, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
  if (train.empty()) throw DataError("no training records");
  if (batch_size == 0) throw DataError("batch size must be positive");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Record>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<Record> b;
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(train[order[j]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace jiadf::data
