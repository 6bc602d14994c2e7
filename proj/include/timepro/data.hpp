// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace timepro {

class DataError : public Error {
 public:
  using Error::Error;
};

enum class SplitRule {
  ett_hourly,      // 12 / 4 / 4 months of hourly rows
  ett_minutely,    // same months at 15-minute resolution
  ratio_70_10_20,  // everything else
};

enum class Segment { train, val, test };

std::string_view to_string(Segment s);
Segment parse_segment(std::string_view name);

struct SplitBounds {
  Index train_end = 0;
  Index val_end = 0;
  Index test_end = 0;
};

/// Picks the split rule from the file name (ETTh*, ETTm*, otherwise ratio).
SplitRule split_rule_for(const std::string& filename);
SplitBounds compute_split(Index total_rows, SplitRule rule);

struct SeriesDataset {
  std::string name;
  std::vector<std::string> channel_names;
  std::vector<std::string> timestamps;  // may be empty
  RowMatrix values;                     // T x N
  SplitBounds split;

  Index rows() const { return values.rows(); }
  Index n_vars() const { return values.cols(); }
  /// [begin, end) rows owned by the segment.
  std::pair<Index, Index> segment_range(Segment s) const;
};

SeriesDataset parse_csv(std::istream& in, const std::string& name,
                        std::optional<SplitRule> rule = std::nullopt);
SeriesDataset load_csv(const std::filesystem::path& path,
                       std::optional<SplitRule> rule = std::nullopt);
void write_csv(const SeriesDataset& ds, const std::filesystem::path& path);

/// Per-segment point counts in the convention of dataset summary tables:
/// rows reachable by a full lookback window, i.e. len(segment + history) - L + 1.
std::array<Index, 3> split_point_counts(const SeriesDataset& ds, Index lookback);

struct Standardizer {
  Array mean;
  Array std;
  std::vector<Index> constant_channels;  // guarded with std = 1
};

/// Mean/std (population) from the train segment only.
Standardizer fit_standardizer(const SeriesDataset& ds, double eps = 1e-8);
SeriesDataset apply_standardizer(const SeriesDataset& ds, const Standardizer& st);
/// fit + apply; warnings for constant channels go to stderr.
SeriesDataset standardize(const SeriesDataset& ds, Standardizer* fitted = nullptr);

struct WindowSample {
  Index origin = 0;  // first target row
  RowMatrix x;       // N x L, rows [origin - L, origin)
  RowMatrix y;       // N x H, rows [origin, origin + H)
};

/// Valid origins of a segment, stride 1. Lookback may reach into earlier segments.
/// Empty when H exceeds the segment; DataError when no origin has enough history.
std::vector<Index> window_origins(const SeriesDataset& ds, Segment segment, Index lookback,
                                  Index horizon);
WindowSample make_window(const SeriesDataset& ds, Index origin, Index lookback, Index horizon);

/// Lazily materialized windows of one segment.
class WindowRange {
 public:
  WindowRange(const SeriesDataset& ds, Segment segment, Index lookback, Index horizon);

  class iterator {
   public:
    using value_type = WindowSample;
    using difference_type = std::ptrdiff_t;
    iterator(const WindowRange* range, std::size_t pos) : range_(range), pos_(pos) {}
    WindowSample operator*() const;
    iterator& operator++() {
      ++pos_;
      return *this;
    }
    bool operator==(const iterator& other) const { return pos_ == other.pos_; }

   private:
    const WindowRange* range_;
    std::size_t pos_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, origins_.size()}; }
  std::size_t size() const { return origins_.size(); }
  bool empty() const { return origins_.empty(); }
  const std::vector<Index>& origins() const { return origins_; }

 private:
  const SeriesDataset* ds_;
  Index lookback_;
  Index horizon_;
  std::vector<Index> origins_;
};

WindowRange windows(const SeriesDataset& ds, Segment segment, Index lookback, Index horizon);

/// Stacks lookback slices for the given origins into a [B, N, L] tensor.
Tensor gather_inputs(const SeriesDataset& ds, std::span<const Index> origins, Index lookback);
/// Stacks targets into [B, N, H].
Tensor gather_targets(const SeriesDataset& ds, std::span<const Index> origins, Index horizon);

enum class SyntheticKind {
  multi_delay,  // seeded sinusoid drivers plus lagged, scaled copies
  ar1,          // independent AR(1) channels with per-channel persistence
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::multi_delay;
  Index length = 4000;
  Index n_vars = 7;
  std::uint64_t seed = 0;
  double noise = 0.1;
};

SeriesDataset make_synthetic(const SyntheticSpec& spec);

struct ManifestEntry {
  std::string filename;
  std::uintmax_t bytes = 0;
  std::string sha256;  // lowercase hex
};

std::string sha256_file(const std::filesystem::path& path);
ManifestEntry describe_file(const std::filesystem::path& path);
/// Tab-separated lines: filename, byte length, sha256.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
/// Empty string when the file matches, otherwise the reason.
std::string verify_file(const std::filesystem::path& dir, const ManifestEntry& entry);

}  // namespace timepro
