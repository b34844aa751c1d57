#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace moeperf {

enum class FixtureSource { table6, table7, table9, table10_12, table13 };

std::string_view to_string(FixtureSource source);
FixtureSource parse_fixture_source(std::string_view text);
std::span<const FixtureSource> all_fixture_sources();

// A bundled measurement table. Files are CSV with leading `# ` comment lines;
// the first comment is `fixture: <id>`. An optional `anomaly` column (0/1)
// flags rows to exclude from comparisons.
struct FixtureTable {
  FixtureSource source = FixtureSource::table6;
  std::vector<std::string> comments;  // without the leading "# "
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<int>> decimals;  // digits after the point, per cell
  std::set<std::size_t> anomalies;         // row indices

  std::size_t column_index(std::string_view name) const;
  std::vector<double> column(std::string_view name) const;
};

/// Expected number of data rows for each source.
std::size_t expected_row_count(FixtureSource source);

FixtureTable parse_fixture(std::string_view text);

/// Inverse of parse_fixture; reproduces the bundled files byte for byte.
std::string serialize_fixture(const FixtureTable& table);

/// The file contents compiled into the library.
std::string_view bundled_fixture_text(FixtureSource source);
FixtureTable load_bundled_fixture(FixtureSource source);

/// Accepts a fixture id ("table9") or a path to a fixture file.
FixtureTable load_fixture(std::string_view id_or_path);

/// Spearman rank correlation with average ranks for ties. Needs at least two
/// points and non-constant inputs.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace moeperf
