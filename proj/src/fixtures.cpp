#include "moeperf/fixtures.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fixtures_data.hpp"
#include "moeperf/error.hpp"

namespace moeperf {
namespace {

constexpr std::array kSources = {FixtureSource::table6, FixtureSource::table7,
                                 FixtureSource::table9, FixtureSource::table10_12,
                                 FixtureSource::table13};

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::string_view to_string(FixtureSource source) {
  switch (source) {
    case FixtureSource::table6: return "table6";
    case FixtureSource::table7: return "table7";
    case FixtureSource::table9: return "table9";
    case FixtureSource::table10_12: return "table10_12";
    case FixtureSource::table13: return "table13";
  }
  return "?";
}

FixtureSource parse_fixture_source(std::string_view text) {
  for (auto s : kSources) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError(fmt::format("unknown fixture '{}'", text));
}

std::span<const FixtureSource> all_fixture_sources() { return kSources; }

std::size_t expected_row_count(FixtureSource source) {
  switch (source) {
    case FixtureSource::table6: return 7;
    case FixtureSource::table7: return 2;
    case FixtureSource::table9: return 14;
    case FixtureSource::table10_12: return 162;
    case FixtureSource::table13: return 17;
  }
  return 0;
}

std::size_t FixtureTable::column_index(std::string_view name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) {
    throw ValidationError(fmt::format("fixture {} has no column '{}'", to_string(source), name));
  }
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> FixtureTable::column(std::string_view name) const {
  const auto c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

FixtureTable parse_fixture(std::string_view text) {
  FixtureTable t;
  bool have_source = false;
  bool have_header = false;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      if (have_header) throw ValidationError(fmt::format("fixture line {}: comment after header", line_no));
      const auto body = line.substr(2);
      if (t.comments.empty()) {
        if (!body.starts_with("fixture: ")) {
          throw ValidationError("fixture: first comment must be 'fixture: <id>'");
        }
        t.source = parse_fixture_source(body.substr(9));
        have_source = true;
      }
      t.comments.emplace_back(body);
      continue;
    }
    if (!have_source) throw ValidationError("fixture: missing 'fixture: <id>' comment");
    const auto cells = split(line, ',');
    if (!have_header) {
      for (auto c : cells) t.columns.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != t.columns.size()) {
      throw ValidationError(fmt::format("fixture line {}: {} cells for {} columns", line_no,
                                        cells.size(), t.columns.size()));
    }
    std::vector<double> row;
    std::vector<int> digits;
    for (auto c : cells) {
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc{} || res.ptr != c.data() + c.size() || !std::isfinite(v)) {
        throw ValidationError(fmt::format("fixture line {}: non-numeric cell '{}'", line_no, c));
      }
      const auto dot = c.find('.');
      row.push_back(v);
      digits.push_back(dot == std::string_view::npos ? 0 : static_cast<int>(c.size() - dot - 1));
    }
    t.rows.push_back(std::move(row));
    t.decimals.push_back(std::move(digits));
  }
  if (!have_header) throw ValidationError("fixture: missing header line");
  if (t.rows.size() != expected_row_count(t.source)) {
    throw ValidationError(fmt::format("fixture {}: {} rows, expected {}", to_string(t.source),
                                      t.rows.size(), expected_row_count(t.source)));
  }
  const auto anomaly = std::find(t.columns.begin(), t.columns.end(), "anomaly");
  if (anomaly != t.columns.end()) {
    const auto c = static_cast<std::size_t>(anomaly - t.columns.begin());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i][c] != 0.0) t.anomalies.insert(i);
    }
  }
  return t;
}

std::string serialize_fixture(const FixtureTable& table) {
  std::string out;
  for (const auto& c : table.comments) out += fmt::format("# {}\n", c);
  out += fmt::format("{}\n", fmt::join(table.columns, ","));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t j = 0; j < table.rows[i].size(); ++j) {
      if (j) out += ',';
      out += fmt::format("{:.{}f}", table.rows[i][j], table.decimals[i][j]);
    }
    out += '\n';
  }
  return out;
}

std::string_view bundled_fixture_text(FixtureSource source) {
  return detail::bundled_fixture(to_string(source));
}

FixtureTable load_bundled_fixture(FixtureSource source) {
  return parse_fixture(bundled_fixture_text(source));
}

FixtureTable load_fixture(std::string_view id_or_path) {
  for (auto s : kSources) {
    if (to_string(s) == id_or_path) return load_bundled_fixture(s);
  }
  std::ifstream in{std::string(id_or_path)};
  if (!in) throw ValidationError(fmt::format("unknown fixture id or unreadable file '{}'", id_or_path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_fixture(ss.str());
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman: length mismatch");
  if (a.size() < 2) throw ValidationError("spearman: need at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) throw ValidationError("spearman: constant input");
  return cov / std::sqrt(va * vb);
}

}  // namespace moeperf
