#pragma once

#include <cstdint>
#include <string_view>

#include "moeperf/model_config.hpp"

namespace moeperf {

enum class Placement { intra_node, inter_node };

std::string_view to_string(Placement p);

struct ParallelConfig {
  int n_devices = 2;
  Placement placement = Placement::intra_node;
  std::int64_t tokens = 1;
  std::int64_t d = 1;
  int n_a = 1;
  int bytes_per_element = 2;

  void validate() const;
};

// Volumes are element counts at the level of the analytic bounds: the TP
// all-reduce lower bound and the EP dispatch+combine worst case.

/// 2 * (n_d - 1) * L * d.
std::int64_t tp_comm_volume(const ParallelConfig& cfg);

/// 2 * n_a * L * d.
std::int64_t ep_comm_volume(const ParallelConfig& cfg);

/// 2 * groups_touched * L * d; groups_touched in [1, n_d].
std::int64_t group_limited_ep_volume(const ParallelConfig& cfg, int groups_touched);

/// Link bandwidth for the placement (intra- or inter-node).
double link_bandwidth(Placement placement, const HardwareProfile& hw);

/// volume * bytes_per_element / link bandwidth.
double comm_time(std::int64_t volume, const ParallelConfig& cfg, const HardwareProfile& hw);

}  // namespace moeperf
