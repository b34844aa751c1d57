#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moeperf/model_config.hpp"

namespace moeperf {

// (b, h, e, p): b experts on the first MoE layer, h on layer p, e on the last,
// linear interpolation in between. p is 1-based.
struct SkipTuple {
  int b = 1;
  int h = 1;
  int e = 1;
  int p = 1;

  friend bool operator==(const SkipTuple&, const SkipTuple&) = default;
};

/// Parses "b,h,e,p" (whitespace around fields allowed).
SkipTuple parse_skip_tuple(std::string_view text);
std::string to_string(const SkipTuple& t);

enum class IndexSpace { moe, global };

IndexSpace parse_index_space(std::string_view text);

struct SkipSchedule {
  std::vector<int> n_a_per_layer;       // one entry per MoE layer
  std::optional<SkipTuple> source;      // empty for uniform schedules
  std::vector<std::string> warnings;    // anchor conflicts resolved in favor of h

  int n_layers() const { return static_cast<int>(n_a_per_layer.size()); }
};

/// Builds the per-layer schedule for N MoE layers with counts clamped to
/// [1, n_e]. When p coincides with the first or last layer, h takes that
/// anchor and the conflicting b or e is ignored (with a warning).
SkipSchedule build_schedule(const SkipTuple& t, int n_layers, int n_e);

/// Converts a tuple whose p counts every transformer layer into MoE-layer
/// indexing (p - n_layers_dense) and builds it for the model.
SkipSchedule build_schedule(const SkipTuple& t, const ModelConfig& model, IndexSpace space);

SkipSchedule uniform_schedule(int n_a, int n_layers);

double average_active(const SkipSchedule& s);

enum class ShapeClass { constant, ascending, descending, peak, valley, mixed };

std::string_view to_string(ShapeClass shape);

/// Classifies by the sequence of non-zero steps: none -> constant, all up ->
/// ascending, all down -> descending, up then down -> peak, down then up ->
/// valley, anything else -> mixed.
ShapeClass shape_class(const SkipSchedule& s);

/// CSV with header `layer_index,n_a`, 1-based layer indices.
std::string schedule_to_csv(const SkipSchedule& s);

}  // namespace moeperf
