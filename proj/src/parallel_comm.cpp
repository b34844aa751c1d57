#include "moeperf/parallel_comm.hpp"

#include <fmt/format.h>

#include "moeperf/error.hpp"

namespace moeperf {
namespace {

void check_shape(const ParallelConfig& cfg) {
  if (cfg.n_devices < 1) throw ValidationError("parallel: device count must be at least 1");
  if (cfg.tokens < 1 || cfg.d < 1) throw ValidationError("parallel: L and d must be at least 1");
  if (cfg.n_a < 0) throw ValidationError("parallel: n_a must be non-negative");
}

}  // namespace

std::string_view to_string(Placement p) {
  return p == Placement::intra_node ? "intra_node" : "inter_node";
}

void ParallelConfig::validate() const {
  check_shape(*this);
  if (n_devices < 2) throw ValidationError("parallel: need at least 2 devices");
  if (bytes_per_element < 1) throw ValidationError("parallel: bytes_per_element must be >= 1");
}

std::int64_t tp_comm_volume(const ParallelConfig& cfg) {
  check_shape(cfg);
  return 2 * static_cast<std::int64_t>(cfg.n_devices - 1) * cfg.tokens * cfg.d;
}

std::int64_t ep_comm_volume(const ParallelConfig& cfg) {
  check_shape(cfg);
  return 2 * static_cast<std::int64_t>(cfg.n_a) * cfg.tokens * cfg.d;
}

std::int64_t group_limited_ep_volume(const ParallelConfig& cfg, int groups_touched) {
  check_shape(cfg);
  if (groups_touched < 1 || groups_touched > cfg.n_devices) {
    throw ValidationError(fmt::format("parallel: groups_touched={} outside [1, {}]", groups_touched,
                                      cfg.n_devices));
  }
  return 2 * static_cast<std::int64_t>(groups_touched) * cfg.tokens * cfg.d;
}

double link_bandwidth(Placement placement, const HardwareProfile& hw) {
  return placement == Placement::intra_node ? hw.intra_node_bw : hw.inter_node_bw;
}

double comm_time(std::int64_t volume, const ParallelConfig& cfg, const HardwareProfile& hw) {
  const double bw = link_bandwidth(cfg.placement, hw);
  if (!(bw > 0.0)) throw ValidationError("parallel: link bandwidth must be positive");
  if (volume < 0) throw ValidationError("parallel: negative volume");
  return static_cast<double>(volume) * cfg.bytes_per_element / bw;
}

}  // namespace moeperf
