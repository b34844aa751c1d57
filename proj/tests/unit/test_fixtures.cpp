#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "moeperf/error.hpp"
#include "moeperf/fixtures.hpp"

using namespace moeperf;

namespace {

std::string read_data_file(FixtureSource s) {
  const std::string path = std::string(MOEPERF_FIXTURE_DIR) + "/" + std::string(to_string(s)) + ".csv";
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST(Fixtures, BundledTextEqualsDataFiles) {
  for (auto s : all_fixture_sources()) {
    const auto file = read_data_file(s);
    ASSERT_FALSE(file.empty()) << to_string(s);
    EXPECT_EQ(bundled_fixture_text(s), file) << to_string(s);
  }
}

TEST(Fixtures, ParseSerializeRoundTripIsByteExact) {
  for (auto s : all_fixture_sources()) {
    const auto text = bundled_fixture_text(s);
    const auto table = parse_fixture(text);
    EXPECT_EQ(table.source, s);
    EXPECT_EQ(table.rows.size(), expected_row_count(s));
    EXPECT_EQ(serialize_fixture(table), text) << to_string(s);
  }
}

TEST(Fixtures, RowCountsAndAnomalies) {
  EXPECT_EQ(expected_row_count(FixtureSource::table6), 7u);
  EXPECT_EQ(expected_row_count(FixtureSource::table7), 2u);
  EXPECT_EQ(expected_row_count(FixtureSource::table9), 14u);
  EXPECT_EQ(expected_row_count(FixtureSource::table10_12), 162u);
  EXPECT_EQ(expected_row_count(FixtureSource::table13), 17u);
  for (auto s : {FixtureSource::table9, FixtureSource::table13}) {
    const auto t = load_bundled_fixture(s);
    const auto conc = t.column("concurrency");
    ASSERT_EQ(t.anomalies.size(), 1u);
    EXPECT_EQ(conc[*t.anomalies.begin()], 192.0);
  }
  EXPECT_TRUE(load_bundled_fixture(FixtureSource::table6).anomalies.empty());
}

TEST(Fixtures, KnownCells) {
  const auto t6 = load_bundled_fixture(FixtureSource::table6);
  const auto thr = t6.column("throughput");
  EXPECT_EQ(thr.front(), 6368.0);
  EXPECT_EQ(thr.back(), 13040.0);
  const auto t9 = load_bundled_fixture(FixtureSource::table9);
  const auto c = t9.column("concurrency");
  const auto na6 = t9.column("na6"), na2 = t9.column("na2");
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] == 4) EXPECT_NEAR(na2[i] / na6[i], 1099.0 / 729.0, 1e-12);
    if (c[i] == 512) EXPECT_NEAR(na2[i] / na6[i], 10954.0 / 9379.0, 1e-12);
  }
}

TEST(Fixtures, LoadByIdOrPath) {
  EXPECT_EQ(load_fixture("table7").rows.size(), 2u);
  const std::string path = std::string(MOEPERF_FIXTURE_DIR) + "/table13.csv";
  EXPECT_EQ(load_fixture(path).source, FixtureSource::table13);
  EXPECT_THROW(load_fixture("table42"), ValidationError);
  EXPECT_THROW(parse_fixture_source("table8"), ValidationError);
}

TEST(Fixtures, MalformedInputIsRejected) {
  EXPECT_THROW(parse_fixture("# fixture: table7\ninput_tokens,output_tokens,throughput\n1,2,3\n"), ValidationError);
  EXPECT_THROW(parse_fixture("# fixture: table7\ninput_tokens,output_tokens,throughput\n1,2,x\n3,4,5\n"),
               ValidationError);
  EXPECT_THROW(parse_fixture("input_tokens,output_tokens,throughput\n1,2,3\n3,4,5\n"), ValidationError);
  EXPECT_THROW(load_bundled_fixture(FixtureSource::table7).column("nope"), ValidationError);
}

TEST(Spearman, HandComputedValues) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(a, std::vector<double>{10, 20, 30, 40, 50}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  // Ranks of b: 1,3,2,5,4 -> d^2 sum = 0+1+1+1+1 = 4 -> 1 - 6*4/(5*24) = 0.8.
  EXPECT_NEAR(spearman(a, std::vector<double>{1, 3, 2, 5, 4}), 0.8, 1e-12);
  // Ties: b ranks 1.5,1.5,3,4 -> Pearson of ranks.
  const std::vector<double> x{1, 2, 3, 4}, y{7, 7, 8, 9};
  const double r = spearman(x, y);
  const double mx = 2.5, my = 2.5;
  const double rx[] = {1, 2, 3, 4}, ry[] = {1.5, 1.5, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(r, sxy / std::sqrt(sxx * syy), 1e-12);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  EXPECT_THROW(spearman(a, std::vector<double>(5, 2.0)), ValidationError);
  EXPECT_THROW(spearman(a, std::vector<double>{1, 2}), ValidationError);
}
