// SPDX-License-Identifier: Apache-2.0
#include "timepro/data.hpp"

#include "timepro/params.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

namespace timepro {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::train: return "train";
    case Segment::val: return "val";
    case Segment::test: return "test";
  }
  return "unknown";
}

Segment parse_segment(std::string_view name) {
  if (name == "train") return Segment::train;
  if (name == "val") return Segment::val;
  if (name == "test") return Segment::test;
  throw Error("unknown segment '" + std::string(name) + "'");
}

SplitRule split_rule_for(const std::string& filename) {
  const std::string stem = std::filesystem::path(filename).filename().string();
  if (stem.rfind("ETTh", 0) == 0) return SplitRule::ett_hourly;
  if (stem.rfind("ETTm", 0) == 0) return SplitRule::ett_minutely;
  return SplitRule::ratio_70_10_20;
}

SplitBounds compute_split(Index total_rows, SplitRule rule) {
  if (rule == SplitRule::ratio_70_10_20) {
    const Index train = static_cast<Index>(static_cast<double>(total_rows) * 0.7);
    const Index test = static_cast<Index>(static_cast<double>(total_rows) * 0.2);
    return {train, total_rows - test, total_rows};
  }
  const Index month = (rule == SplitRule::ett_hourly ? 24 : 96) * 30;
  const SplitBounds b{12 * month, 16 * month, 20 * month};
  if (total_rows < b.test_end) {
    throw DataError("ETT split needs " + std::to_string(b.test_end) + " rows, file has " +
                    std::to_string(total_rows));
  }
  return b;
}

std::pair<Index, Index> SeriesDataset::segment_range(Segment s) const {
  switch (s) {
    case Segment::train: return {0, split.train_end};
    case Segment::val: return {split.train_end, split.val_end};
    case Segment::test: return {split.val_end, split.test_end};
  }
  return {0, 0};
}

SeriesDataset parse_csv(std::istream& in, const std::string& name, std::optional<SplitRule> rule) {
  SeriesDataset ds;
  ds.name = name;
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw DataError(name + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  const auto header = split_commas(line);
  if (header.size() < 2) throw DataError(name + ": line 1: need a date column and at least one series");
  if (header[0] != "date") {
    throw DataError(name + ": line 1: first column must be 'date', found '" + std::string(header[0]) + "'");
  }
  for (std::size_t c = 1; c < header.size(); ++c) ds.channel_names.emplace_back(header[c]);
  const std::size_t n_cols = header.size();

  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != n_cols) {
      throw DataError(name + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(n_cols) + " columns, found " + std::to_string(cells.size()));
    }
    ds.timestamps.emplace_back(cells[0]);
    for (std::size_t c = 1; c < n_cols; ++c) {
      const std::string_view cell = cells[c];
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw DataError(name + ": line " + std::to_string(line_no) + ": column " +
                        std::to_string(c + 1) + " is not a number: '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
  }
  const Index rows = static_cast<Index>(ds.timestamps.size());
  if (rows == 0) throw DataError(name + ": no data rows");
  const Index cols = static_cast<Index>(n_cols - 1);
  ds.values = Eigen::Map<const RowMatrix>(values.data(), rows, cols);
  ds.split = compute_split(rows, rule.value_or(split_rule_for(name)));
  return ds;
}

SeriesDataset load_csv(const std::filesystem::path& path, std::optional<SplitRule> rule) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file " + path.string());
  return parse_csv(in, path.filename().string(), rule);
}

void write_csv(const SeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "date";
  for (const auto& c : ds.channel_names) out << ',' << c;
  out << '\n';
  for (Index r = 0; r < ds.rows(); ++r) {
    if (static_cast<std::size_t>(r) < ds.timestamps.size()) {
      out << ds.timestamps[static_cast<std::size_t>(r)];
    } else {
      out << r;
    }
    for (Index c = 0; c < ds.n_vars(); ++c) out << ',' << format_double(ds.values(r, c));
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::array<Index, 3> split_point_counts(const SeriesDataset& ds, Index lookback) {
  std::array<Index, 3> counts{};
  const Segment segs[] = {Segment::train, Segment::val, Segment::test};
  for (int i = 0; i < 3; ++i) {
    const auto [begin, end] = ds.segment_range(segs[i]);
    const Index first = std::max<Index>(begin - lookback, 0);
    counts[static_cast<std::size_t>(i)] = std::max<Index>(end - first - lookback + 1, 0);
  }
  return counts;
}

Standardizer fit_standardizer(const SeriesDataset& ds, double eps) {
  const Index train = ds.split.train_end;
  if (train < 1) throw DataError("standardize: empty train segment");
  const auto block = ds.values.topRows(train).array();
  Standardizer st;
  st.mean = block.colwise().mean().transpose();
  st.std.resize(ds.n_vars());
  for (Index c = 0; c < ds.n_vars(); ++c) {
    const double sd = std::sqrt((block.col(c) - st.mean(c)).square().mean());
    if (sd < eps) {
      st.std(c) = 1.0;
      st.constant_channels.push_back(c);
    } else {
      st.std(c) = sd;
    }
  }
  return st;
}

SeriesDataset apply_standardizer(const SeriesDataset& ds, const Standardizer& st) {
  if (st.mean.size() != ds.n_vars()) throw DataError("standardizer width mismatch");
  SeriesDataset out = ds;
  out.values = ((ds.values.array().rowwise() - st.mean.transpose()).rowwise() / st.std.transpose()).matrix();
  return out;
}

SeriesDataset standardize(const SeriesDataset& ds, Standardizer* fitted) {
  Standardizer st = fit_standardizer(ds);
  for (Index c : st.constant_channels) {
    const std::string cname = static_cast<std::size_t>(c) < ds.channel_names.size()
                                  ? ds.channel_names[static_cast<std::size_t>(c)]
                                  : std::to_string(c);
    std::cerr << "warning: channel " << cname << " is constant on the train segment\n";
  }
  SeriesDataset out = apply_standardizer(ds, st);
  if (fitted) *fitted = std::move(st);
  return out;
}

std::vector<Index> window_origins(const SeriesDataset& ds, Segment segment, Index lookback,
                                  Index horizon) {
  if (lookback < 1 || horizon < 1) throw DataError("lookback and horizon must be positive");
  const auto [begin, end] = ds.segment_range(segment);
  if (horizon > end - begin) return {};
  const Index first = std::max(begin, lookback);
  const Index last = end - horizon;
  if (first > last) {
    throw DataError("segment " + std::string(to_string(segment)) + " of " + ds.name +
                    ": lookback " + std::to_string(lookback) + " + horizon " +
                    std::to_string(horizon) + " exceeds the available history");
  }
  std::vector<Index> origins;
  origins.reserve(static_cast<std::size_t>(last - first + 1));
  for (Index o = first; o <= last; ++o) origins.push_back(o);
  return origins;
}

WindowSample make_window(const SeriesDataset& ds, Index origin, Index lookback, Index horizon) {
  if (origin < lookback || origin + horizon > ds.rows()) throw DataError("window out of range");
  WindowSample w;
  w.origin = origin;
  w.x = ds.values.middleRows(origin - lookback, lookback).transpose();
  w.y = ds.values.middleRows(origin, horizon).transpose();
  return w;
}

WindowRange::WindowRange(const SeriesDataset& ds, Segment segment, Index lookback, Index horizon)
    : ds_(&ds),
      lookback_(lookback),
      horizon_(horizon),
      origins_(window_origins(ds, segment, lookback, horizon)) {}

WindowSample WindowRange::iterator::operator*() const {
  return make_window(*range_->ds_, range_->origins_[pos_], range_->lookback_, range_->horizon_);
}

WindowRange windows(const SeriesDataset& ds, Segment segment, Index lookback, Index horizon) {
  return WindowRange(ds, segment, lookback, horizon);
}

namespace {

Tensor gather(const SeriesDataset& ds, std::span<const Index> origins, Index offset, Index len) {
  const Index b = static_cast<Index>(origins.size());
  const Index n = ds.n_vars();
  Array out(b * n * len);
  for (Index i = 0; i < b; ++i) {
    const Index start = origins[static_cast<std::size_t>(i)] + offset;
    if (start < 0 || start + len > ds.rows()) throw DataError("window out of range");
    Eigen::Map<RowMatrix> dst(out.data() + i * n * len, n, len);
    dst = ds.values.middleRows(start, len).transpose();
  }
  return Tensor::from({b, n, len}, std::move(out));
}

}  // namespace

Tensor gather_inputs(const SeriesDataset& ds, std::span<const Index> origins, Index lookback) {
  return gather(ds, origins, -lookback, lookback);
}

Tensor gather_targets(const SeriesDataset& ds, std::span<const Index> origins, Index horizon) {
  return gather(ds, origins, 0, horizon);
}

SeriesDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 2 || spec.n_vars < 1) throw DataError("synthetic: bad size");
  Rng rng(spec.seed);
  const Index t_len = spec.length;
  const Index n = spec.n_vars;
  RowMatrix v(t_len, n);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  if (spec.kind == SyntheticKind::ar1) {
    for (Index c = 0; c < n; ++c) {
      const double phi = rng.uniform(0.9, 0.98);
      double x = rng.normal();
      for (Index t = 0; t < t_len; ++t) {
        x = phi * x + spec.noise * rng.normal();
        v(t, c) = x;
      }
    }
  } else {
    // A few sinusoid drivers; the remaining channels follow a driver with
    // their own delay, gain and noise.
    const Index drivers = std::max<Index>(1, (n + 2) / 3);
    const Index warm = 64;
    RowMatrix base(t_len + warm, drivers);
    for (Index d = 0; d < drivers; ++d) {
      const double p1 = rng.uniform(16.0, 48.0);
      const double p2 = rng.uniform(60.0, 200.0);
      const double ph1 = rng.uniform(0.0, two_pi);
      const double ph2 = rng.uniform(0.0, two_pi);
      const double a2 = rng.uniform(0.3, 0.8);
      double ar = 0.0;
      for (Index t = 0; t < t_len + warm; ++t) {
        ar = 0.8 * ar + spec.noise * rng.normal();
        const double tt = static_cast<double>(t);
        base(t, d) = std::sin(two_pi * tt / p1 + ph1) + a2 * std::sin(two_pi * tt / p2 + ph2) + ar;
      }
    }
    for (Index c = 0; c < n; ++c) {
      const Index d = c % drivers;
      const Index lag = c < drivers ? 0 : 1 + static_cast<Index>(rng.next() % 40);
      const double gain = c < drivers ? 1.0 : rng.uniform(0.5, 1.5) * (rng.uniform() < 0.3 ? -1.0 : 1.0);
      for (Index t = 0; t < t_len; ++t) {
        v(t, c) = gain * base(t + warm - lag, d) + 0.5 * spec.noise * rng.normal();
      }
    }
  }

  SeriesDataset ds;
  ds.name = spec.kind == SyntheticKind::ar1 ? "synthetic_ar1" : "synthetic";
  for (Index c = 0; c < n; ++c) ds.channel_names.push_back("x" + std::to_string(c));
  ds.timestamps.reserve(static_cast<std::size_t>(t_len));
  for (Index t = 0; t < t_len; ++t) ds.timestamps.push_back(std::to_string(t));
  ds.values = std::move(v);
  ds.split = compute_split(t_len, SplitRule::ratio_70_10_20);
  return ds;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 initialisation failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

ManifestEntry describe_file(const std::filesystem::path& path) {
  return {path.filename().string(), std::filesystem::file_size(path), sha256_file(path)};
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.filename >> e.bytes >> e.sha256) || e.sha256.size() != 64) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": malformed entry");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "# filename\tbytes\tsha256\n";
  for (const auto& e : entries) out << e.filename << '\t' << e.bytes << '\t' << e.sha256 << '\n';
}

std::string verify_file(const std::filesystem::path& dir, const ManifestEntry& entry) {
  const auto path = dir / entry.filename;
  if (!std::filesystem::exists(path)) return "missing file " + path.string();
  const auto size = std::filesystem::file_size(path);
  if (size != entry.bytes) {
    return entry.filename + ": size " + std::to_string(size) + " != " + std::to_string(entry.bytes);
  }
  const std::string digest = sha256_file(path);
  if (digest != entry.sha256) return entry.filename + ": sha256 mismatch";
  return {};
}

}  // namespace timepro
