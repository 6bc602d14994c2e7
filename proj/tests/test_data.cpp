// SPDX-License-Identifier: Apache-2.0
#include "timepro/data.hpp"
#include "timepro/params.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>
#include <fstream>
#include <sstream>

namespace timepro {
namespace {

namespace fs = std::filesystem;

SeriesDataset ramp(Index rows, Index cols, SplitBounds split) {
  SeriesDataset ds;
  ds.name = "ramp";
  ds.values.resize(rows, cols);
  for (Index t = 0; t < rows; ++t) {
    for (Index c = 0; c < cols; ++c) ds.values(t, c) = 10.0 * c + t;
  }
  for (Index c = 0; c < cols; ++c) ds.channel_names.push_back("c" + std::to_string(c));
  ds.split = split;
  return ds;
}

std::string data_error(const std::string& csv, const std::string& name = "f.csv") {
  std::istringstream in(csv);
  try {
    parse_csv(in, name);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

class DataFiles : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / ("timepro_data_test_" + std::to_string(::getpid()));
  void SetUp() override { fs::create_directories(dir); }
  void TearDown() override { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& body) {
    std::ofstream(dir / name, std::ios::binary) << body;
    return dir / name;
  }
};

TEST(Csv, LiteralCellsOfThreeRows) {
  std::istringstream in("date,a,b\n2020-01-01,1.5,-2\n2020-01-02,3e2,0.25\n2020-01-03,-0,7\n");
  const SeriesDataset ds = parse_csv(in, "tiny.csv");
  ASSERT_EQ(ds.rows(), 3);
  ASSERT_EQ(ds.n_vars(), 2);
  EXPECT_EQ(ds.channel_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.timestamps[2], "2020-01-03");
  const double expected[3][2] = {{1.5, -2}, {300, 0.25}, {0, 7}};
  for (Index t = 0; t < 3; ++t) {
    for (Index c = 0; c < 2; ++c) EXPECT_EQ(ds.values(t, c), expected[t][c]);
  }
}

TEST(Csv, CrlfAndBomAccepted) {
  std::istringstream in("\xEF\xBB\xBF" "date,x\r\n1,4\r\n2,5\r\n");
  const SeriesDataset ds = parse_csv(in, "crlf.csv");
  EXPECT_EQ(ds.rows(), 2);
  EXPECT_EQ(ds.values(1, 0), 5.0);
}

TEST(Csv, ErrorsReportLineNumbers) {
  EXPECT_NE(data_error("").find("empty file"), std::string::npos);
  EXPECT_NE(data_error("date,a\n").find("no data rows"), std::string::npos);
  EXPECT_NE(data_error("time,a\n1,2\n").find("line 1"), std::string::npos);
  EXPECT_NE(data_error("date,a,b\n1,2,3\n2,3\n").find("line 3"), std::string::npos);
  EXPECT_NE(data_error("date,a\n1,2\n2,3\n3,abc\n").find("line 4"), std::string::npos);
  EXPECT_NE(data_error("date,a\n1,\n").find("line 2"), std::string::npos);
}

TEST_F(DataFiles, WriteThenLoadIsIdentity) {
  SeriesDataset ds = ramp(40, 3, compute_split(40, SplitRule::ratio_70_10_20));
  Rng rng(1);
  ds.values = ds.values.array() * 1e-3 + 7.123456789012345;
  ds.values(3, 1) = rng.normal() * 1e-300;
  ds.values(4, 2) = 1e300 * rng.uniform();
  write_csv(ds, dir / "rt.csv");
  const SeriesDataset back = load_csv(dir / "rt.csv");
  ASSERT_EQ(back.rows(), 40);
  EXPECT_LT((back.values - ds.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE((back.values.array() == ds.values.array()).all());
  EXPECT_THROW(load_csv(dir / "absent.csv"), DataError);
}

TEST(Split, RuleFromFileName) {
  EXPECT_EQ(split_rule_for("/x/ETTh1.csv"), SplitRule::ett_hourly);
  EXPECT_EQ(split_rule_for("ETTm2.csv"), SplitRule::ett_minutely);
  EXPECT_EQ(split_rule_for("exchange_rate.csv"), SplitRule::ratio_70_10_20);
  const SplitBounds r = compute_split(1000, SplitRule::ratio_70_10_20);
  EXPECT_EQ(r.train_end, 700);
  EXPECT_EQ(r.val_end, 800);
  EXPECT_EQ(r.test_end, 1000);
  EXPECT_THROW(compute_split(1000, SplitRule::ett_hourly), DataError);
}

TEST(Split, EttHourlyPointCounts) {
  // ETTh1 length with seven channels.
  SeriesDataset ds = ramp(17420, 7, compute_split(17420, split_rule_for("ETTh1.csv")));
  EXPECT_EQ(ds.n_vars(), 7);
  const auto counts = split_point_counts(ds, 96);
  EXPECT_EQ(counts[0], 8545);
  EXPECT_EQ(counts[1], 2881);
  EXPECT_EQ(counts[2], 2881);

  // Brute-force enumeration of the test windows.
  const auto [begin, end] = ds.segment_range(Segment::test);
  Index expected = 0;
  for (Index o = 0; o < ds.rows(); ++o) {
    if (o >= begin && o + 96 <= end && o - 96 >= 0) ++expected;
  }
  EXPECT_EQ(static_cast<Index>(window_origins(ds, Segment::test, 96, 96).size()), expected);
}

TEST(Windows, CountingExample) {
  const SeriesDataset ds = ramp(10, 2, {10, 10, 10});
  const std::vector<Index> o = window_origins(ds, Segment::train, 3, 2);
  EXPECT_EQ(o, (std::vector<Index>{3, 4, 5, 6, 7, 8}));
  Index seen = 0;
  for (const WindowSample& w : windows(ds, Segment::train, 3, 2)) {
    ASSERT_EQ(w.x.rows(), 2);
    ASSERT_EQ(w.x.cols(), 3);
    // Targets start one step after the lookback ends.
    EXPECT_EQ(w.y(0, 0), w.x(0, 2) + 1.0);
    EXPECT_EQ(w.x(1, 0), 10.0 + (w.origin - 3));
    ++seen;
  }
  EXPECT_EQ(seen, 6);
}

TEST(Windows, HorizonLongerThanSegmentIsEmpty) {
  const SeriesDataset ds = ramp(30, 1, {20, 25, 30});
  EXPECT_TRUE(window_origins(ds, Segment::val, 4, 6).empty());
  EXPECT_TRUE(windows(ds, Segment::val, 4, 6).empty());
  EXPECT_THROW(window_origins(ds, Segment::train, 25, 1), DataError);
}

TEST(Windows, NoLeakageIntoLaterSegments) {
  const SeriesDataset ds = ramp(200, 2, compute_split(200, SplitRule::ratio_70_10_20));
  for (Segment s : {Segment::train, Segment::val, Segment::test}) {
    const auto [begin, end] = ds.segment_range(s);
    for (Index o : window_origins(ds, s, 12, 7)) {
      EXPECT_GE(o, begin);
      EXPECT_LE(o + 7, end);
    }
  }
  const std::vector<Index> origins{20, 35};
  const Tensor x = gather_inputs(ds, origins, 12);
  const Tensor y = gather_targets(ds, origins, 7);
  EXPECT_EQ(x.shape(), (Shape{2, 2, 12}));
  EXPECT_EQ(y.shape(), (Shape{2, 2, 7}));
  EXPECT_EQ(x.at({1, 1, 11}), 10.0 + 34);
  EXPECT_EQ(y.at({1, 1, 0}), 10.0 + 35);
}

TEST(Standardize, HandStatsFromTrainOnly) {
  SeriesDataset ds;
  ds.name = "two";
  ds.values.resize(6, 2);
  ds.values << 1, 5, 3, 5, 5, 5, 7, 5, 100, 9, -100, 9;
  ds.split = {4, 5, 6};
  const Standardizer st = fit_standardizer(ds);
  EXPECT_DOUBLE_EQ(st.mean(0), 4.0);
  EXPECT_DOUBLE_EQ(st.std(0), std::sqrt(5.0));  // (9 + 1 + 1 + 9) / 4
  EXPECT_EQ(st.constant_channels, std::vector<Index>{1});
  EXPECT_EQ(st.std(1), 1.0);
  const SeriesDataset z = apply_standardizer(ds, st);
  EXPECT_DOUBLE_EQ(z.values(0, 0), -3.0 / std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(z.values(4, 0), 96.0 / std::sqrt(5.0));
  for (Index t = 0; t < 4; ++t) EXPECT_EQ(z.values(t, 1), 0.0);
  EXPECT_EQ(z.values(5, 1), 4.0);
}

TEST(Standardize, AlreadyStandardIsNearIdentity) {
  SeriesDataset ds;
  ds.values.resize(8, 1);
  ds.values << -1, 1, -1, 1, -1, 1, -1, 1;
  ds.split = {8, 8, 8};
  Standardizer st;
  const SeriesDataset z = standardize(ds, &st);
  EXPECT_LT((z.values - ds.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Synthetic, SeededAndShaped) {
  SyntheticSpec spec;
  spec.seed = 3;
  const SeriesDataset a = make_synthetic(spec);
  const SeriesDataset b = make_synthetic(spec);
  EXPECT_EQ(a.rows(), 4000);
  EXPECT_EQ(a.n_vars(), 7);
  EXPECT_TRUE((a.values.array() == b.values.array()).all());
  spec.seed = 4;
  EXPECT_FALSE((make_synthetic(spec).values.array() == a.values.array()).all());
  spec.kind = SyntheticKind::ar1;
  spec.n_vars = 2;
  const SeriesDataset c = make_synthetic(spec);
  EXPECT_EQ(c.n_vars(), 2);
  EXPECT_TRUE(c.values.allFinite());
}

TEST_F(DataFiles, Sha256AndManifest) {
  EXPECT_EQ(sha256_file(write("abc.txt", "abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_file(write("empty.txt", "")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::vector<ManifestEntry> entries{describe_file(dir / "abc.txt"), describe_file(dir / "empty.txt")};
  EXPECT_EQ(entries[0].bytes, 3u);
  write_manifest(dir / "MANIFEST.tsv", entries);
  const std::vector<ManifestEntry> back = read_manifest(dir / "MANIFEST.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].filename, "abc.txt");
  EXPECT_EQ(back[1].sha256, entries[1].sha256);
  EXPECT_EQ(verify_file(dir, back[0]), "");
  write("abc.txt", "abd");
  EXPECT_NE(verify_file(dir, back[0]), "");
  write("abc.txt", "abcd");
  EXPECT_NE(verify_file(dir, back[0]), "");
  fs::remove(dir / "abc.txt");
  EXPECT_NE(verify_file(dir, back[0]), "");
}

}  // namespace
}  // namespace timepro
