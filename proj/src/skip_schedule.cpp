#include "moeperf/skip_schedule.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>

#include <fmt/format.h>

#include "moeperf/error.hpp"

namespace moeperf {
namespace {

// round(num / den) with halves away from zero, den > 0.
int round_ratio(long long num, long long den) {
  const long long twice = 2 * num;
  if (num >= 0) return static_cast<int>((twice + den) / (2 * den));
  return -static_cast<int>((-twice + den) / (2 * den));
}

// Value at position i (1-based) on the segment from (x0, y0) to (x1, y1).
int interpolate(int i, int x0, int y0, int x1, int y1) {
  const long long span = x1 - x0;
  return round_ratio(static_cast<long long>(y0) * span + static_cast<long long>(y1 - y0) * (i - x0),
                     span);
}

}  // namespace

SkipTuple parse_skip_tuple(std::string_view text) {
  int values[4] = {};
  std::size_t pos = 0;
  for (int k = 0; k < 4; ++k) {
    auto end = text.find(',', pos);
    if (k < 3 && end == std::string_view::npos) {
      throw ValidationError(fmt::format("tuple '{}': expected four comma-separated integers", text));
    }
    if (k == 3) {
      if (end != std::string_view::npos) {
        throw ValidationError(fmt::format("tuple '{}': too many fields", text));
      }
      end = text.size();
    }
    auto field = text.substr(pos, end - pos);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), values[k]);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
      throw ValidationError(fmt::format("tuple '{}': field {} is not an integer", text, k + 1));
    }
    pos = end + 1;
  }
  return {values[0], values[1], values[2], values[3]};
}

std::string to_string(const SkipTuple& t) { return fmt::format("{},{},{},{}", t.b, t.h, t.e, t.p); }

IndexSpace parse_index_space(std::string_view text) {
  if (text == "moe") return IndexSpace::moe;
  if (text == "global") return IndexSpace::global;
  throw ValidationError(fmt::format("unknown index space '{}' (moe or global)", text));
}

SkipSchedule build_schedule(const SkipTuple& t, int n_layers, int n_e) {
  if (n_layers < 1) throw ValidationError("schedule: need at least one MoE layer");
  if (n_e < 1) throw ValidationError("schedule: n_e must be at least 1");
  for (auto [name, v] : {std::pair{"b", t.b}, {"h", t.h}, {"e", t.e}}) {
    if (v < 1 || v > n_e) {
      throw ValidationError(fmt::format("schedule: {}={} outside [1, {}]", name, v, n_e));
    }
  }
  if (t.p < 1 || t.p > n_layers) {
    throw ValidationError(fmt::format("schedule: p={} outside [1, {}]", t.p, n_layers));
  }

  SkipSchedule s;
  s.source = t;
  s.n_a_per_layer.resize(n_layers);
  const int N = n_layers;
  for (int i = 1; i <= N; ++i) {
    int v = 0;
    if (i == t.p) {
      v = t.h;
    } else if (i < t.p) {
      v = interpolate(i, 1, t.b, t.p, t.h);
    } else {
      v = interpolate(i, t.p, t.h, N, t.e);
    }
    s.n_a_per_layer[i - 1] = std::clamp(v, 1, n_e);
  }
  if (t.p == 1 && t.b != t.h) {
    s.warnings.push_back(fmt::format("p=1: layer 1 takes h={}, b={} ignored", t.h, t.b));
  }
  if (t.p == N && t.e != t.h) {
    s.warnings.push_back(fmt::format("p={} is the last layer: it takes h={}, e={} ignored", N, t.h, t.e));
  }
  return s;
}

SkipSchedule build_schedule(const SkipTuple& t, const ModelConfig& model, IndexSpace space) {
  model.validate();
  SkipTuple local = t;
  if (space == IndexSpace::global) {
    local.p = t.p - model.n_layers_dense;
    if (local.p < 1) {
      throw ValidationError(fmt::format("schedule: global p={} falls on a dense layer", t.p));
    }
  }
  SkipSchedule s = build_schedule(local, model.n_moe_layers(), model.n_e);
  s.source = t;
  return s;
}

SkipSchedule uniform_schedule(int n_a, int n_layers) {
  if (n_layers < 1 || n_a < 1) throw ValidationError("uniform schedule: counts must be >= 1");
  SkipSchedule s;
  s.n_a_per_layer.assign(n_layers, n_a);
  return s;
}

double average_active(const SkipSchedule& s) {
  if (s.n_a_per_layer.empty()) throw ValidationError("schedule: empty");
  const long long sum = std::accumulate(s.n_a_per_layer.begin(), s.n_a_per_layer.end(), 0LL);
  return static_cast<double>(sum) / static_cast<double>(s.n_a_per_layer.size());
}

std::string_view to_string(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::constant: return "constant";
    case ShapeClass::ascending: return "ascending";
    case ShapeClass::descending: return "descending";
    case ShapeClass::peak: return "peak";
    case ShapeClass::valley: return "valley";
    case ShapeClass::mixed: return "mixed";
  }
  return "mixed";
}

ShapeClass shape_class(const SkipSchedule& s) {
  // Collapse the step signs into runs.
  std::vector<int> runs;
  for (std::size_t i = 1; i < s.n_a_per_layer.size(); ++i) {
    const int diff = s.n_a_per_layer[i] - s.n_a_per_layer[i - 1];
    if (diff == 0) continue;
    const int sign = diff > 0 ? 1 : -1;
    if (runs.empty() || runs.back() != sign) runs.push_back(sign);
  }
  if (runs.empty()) return ShapeClass::constant;
  if (runs.size() == 1) return runs[0] > 0 ? ShapeClass::ascending : ShapeClass::descending;
  if (runs.size() == 2) return runs[0] > 0 ? ShapeClass::peak : ShapeClass::valley;
  return ShapeClass::mixed;
}

std::string schedule_to_csv(const SkipSchedule& s) {
  std::string out = "layer_index,n_a\n";
  for (std::size_t i = 0; i < s.n_a_per_layer.size(); ++i) {
    out += fmt::format("{},{}\n", i + 1, s.n_a_per_layer[i]);
  }
  return out;
}

}  // namespace moeperf
