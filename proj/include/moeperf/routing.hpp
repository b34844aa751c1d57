#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moeperf/model_config.hpp"

namespace moeperf {

// How a group is scored when group-limited routing keeps only the best
// topk_group groups.
enum class GroupScore { top2_sum, max };

enum class SoftCountMode { all_experts, selected_only };

struct RouterConfig {
  RouterKind kind = RouterKind::softmax;
  // softmax: true renormalizes over the selected logits, false takes the
  // probabilities of a softmax over all eligible experts.
  // sigmoid: true divides the selected logistic scores by their sum.
  bool normalize_selected = true;
  std::optional<GroupConfig> group;
  GroupScore group_score = GroupScore::top2_sum;
  int n_e = 0;
  int n_a = 0;

  void validate() const;

  static RouterConfig from_model(const ModelConfig& model,
                                 std::optional<int> n_a_override = std::nullopt);
};

struct RoutingDecision {
  std::vector<int> selected;     // in selection order (descending logit)
  std::vector<double> weights;   // aligned with selected
  std::vector<double> logits;    // raw router logits, all n_e
};

/// Top-k gating. Group masking (when configured) runs first, then the n_a
/// largest logits are picked with ties going to the lower index, then the
/// weight function is applied.
RoutingDecision route(std::span<const double> logits, const RouterConfig& cfg);

/// Same as route, restricted to experts flagged in `eligible` (size n_e).
/// Ineligible experts neither count toward group scores nor receive weight.
RoutingDecision route_among(std::span<const double> logits, const RouterConfig& cfg,
                            const std::vector<bool>& eligible);

/// Per-expert probabilities before top-k: softmax over all logits, or the
/// elementwise logistic for sigmoid routers.
std::vector<double> pre_topk_probabilities(std::span<const double> logits, RouterKind kind);

/// Expected number of distinct experts touched by T tokens that each pick
/// n_a distinct experts uniformly: n_e * (1 - (1 - n_a/n_e)^T).
double expected_distinct_experts(int n_e, int n_a, std::int64_t tokens);

/// Skewed variant. Each expert's per-token inclusion probability is
/// approximated by min(1, n_a * p_j); exact for the uniform case.
double expected_distinct_experts(std::span<const double> popularity, int n_a,
                                 std::int64_t tokens);

struct LayerStats {
  std::vector<std::int64_t> hard;
  std::vector<double> soft;
  std::int64_t tokens_seen = 0;

  friend bool operator==(const LayerStats&, const LayerStats&) = default;
};

// Per-layer expert popularity gathered from a calibration stream.
class RoutingStats {
 public:
  RoutingStats() = default;
  explicit RoutingStats(int n_e) : n_e_(n_e) {}

  int n_e() const { return n_e_; }
  const std::map<int, LayerStats>& layers() const { return layers_; }
  const LayerStats& layer(int index) const;
  LayerStats& mutable_layer(int index);

  /// Records one token. `probabilities` are the token's pre-top-k expert
  /// probabilities (size n_e).
  void accumulate(int layer, const RoutingDecision& decision,
                  std::span<const double> probabilities,
                  SoftCountMode mode = SoftCountMode::all_experts);

  /// Checks sum(hard) == tokens_seen * n_a for every layer and soft >= 0.
  void check_invariants(int n_a) const;

  std::string to_json() const;
  static RoutingStats from_json(std::string_view text);

  /// FNV-1a 64 over the canonical JSON text, as 16 hex digits.
  std::string digest() const;

  friend bool operator==(const RoutingStats&, const RoutingStats&) = default;

 private:
  int n_e_ = 0;
  std::map<int, LayerStats> layers_;
};

struct StatsRecord {
  int layer = 0;
  RoutingDecision decision;
  std::vector<double> probabilities;
};

RoutingStats accumulate_stats(std::span<const StatsRecord> stream, int n_e,
                              SoftCountMode mode = SoftCountMode::all_experts);

struct BatchRoutingResult {
  int distinct_count = 0;
  RoutingStats stats;  // single layer 0
};

/// Monte Carlo draw of one batch of T tokens. Token t uses the random stream
/// (seed, t), so the result does not depend on `workers`. Without a
/// popularity vector routing is uniform; with one, each token draws n_a
/// distinct experts by successive sampling proportional to popularity, and the
/// soft count accumulates the popularity itself.
BatchRoutingResult simulate_batch_routing(const RouterConfig& cfg, std::int64_t tokens,
                                          std::optional<std::span<const double>> popularity,
                                          std::uint64_t seed, int workers = 1);

struct DistinctSample {
  double mean = 0.0;
  double stddev = 0.0;
  double std_error = 0.0;
  std::vector<int> counts;  // one per trial
};

/// Repeats the distinct-count draw `trials` times; trial i uses seed stream
/// (seed, i). Deterministic for any worker count.
DistinctSample sample_distinct_experts(int n_e, int n_a, std::int64_t tokens, int trials,
                                       std::uint64_t seed, int workers = 1);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace moeperf
