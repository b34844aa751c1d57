#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moeperf/model_config.hpp"
#include "moeperf/routing.hpp"

namespace moeperf {

enum class PruneStrategy { random, odd, even, first_half, last_half, activate_count, soft_count };

std::string_view to_string(PruneStrategy s);
PruneStrategy parse_prune_strategy(std::string_view text);

// Experts retained per MoE layer after pruning. Layer lists are sorted.
struct PruneMask {
  PruneStrategy strategy = PruneStrategy::first_half;
  int keep = 0;
  int n_e = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stats_digest;
  std::vector<std::vector<int>> layers;

  int n_layers() const { return static_cast<int>(layers.size()); }

  /// Every layer holds `keep` distinct sorted indices in [0, n_e) and
  /// keep >= n_a.
  void validate(int n_a) const;

  std::string to_json() const;
  static PruneMask from_json(std::string_view text);

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

struct MaskRequest {
  PruneStrategy strategy = PruneStrategy::first_half;
  int keep = 0;
  int n_e = 0;
  int n_a = 1;
  int n_layers = 1;
  std::optional<std::uint64_t> seed;
  const RoutingStats* stats = nullptr;  // layer i of the mask reads stats layer i
};

/// Structured strategies are layer-uniform; odd keeps 1,3,5,... and even
/// keeps 0,2,4,... (zero-based). Count strategies rank experts per layer by
/// hard or soft count, ties to the lower index. Random draws each layer from
/// the stream (seed, layer).
PruneMask build_mask(const MaskRequest& request);

/// Routes with every expert outside `retained` excluded before top-k.
RoutingDecision route_restricted(std::span<const double> logits, const RouterConfig& cfg,
                                 std::span<const int> retained);

/// Bytes of routed-expert weights no longer stored:
/// (n_e - keep) * 3 * d_e * d * bytes_per_element * n_moe_layers.
std::int64_t mask_memory_savings(const PruneMask& mask, const ModelConfig& config);

}  // namespace moeperf
