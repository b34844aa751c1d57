#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace moeperf {

enum class RouterKind { softmax, sigmoid };

std::string_view to_string(RouterKind kind);
RouterKind parse_router_kind(std::string_view text);

// Group-limited routing: experts are split into n_group equal groups and a
// token may only pick experts from its best topk_group groups.
struct GroupConfig {
  int n_group = 1;
  int topk_group = 1;

  friend bool operator==(const GroupConfig&, const GroupConfig&) = default;
};

// Architecture parameters of a fine-grained MoE transformer. Sizes are in
// elements; bytes_per_element converts to memory traffic.
struct ModelConfig {
  std::string name;
  std::int64_t d = 0;    // hidden size
  std::int64_t d_e = 0;  // per routed expert intermediate size
  std::int64_t d_s = 0;  // shared expert intermediate size
  int n_e = 0;           // routed experts per MoE layer
  int n_a = 0;           // default active routed experts per token
  int n_layers_total = 0;
  int n_layers_dense = 0;  // leading layers with a dense FFN instead of MoE
  RouterKind router_kind = RouterKind::softmax;
  bool normalize_selected = true;
  std::optional<GroupConfig> group;
  int bytes_per_element = 2;

  int n_moe_layers() const { return n_layers_total - n_layers_dense; }

  // Throws ValidationError naming the first offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HardwareProfile {
  std::string name;
  double peak_flops = 0.0;     // FLOP/s
  double mem_bw = 0.0;         // bytes/s
  double intra_node_bw = 0.0;  // bytes/s per link
  double inter_node_bw = 0.0;  // bytes/s per link
  int n_devices_per_node = 1;

  void validate() const;

  friend bool operator==(const HardwareProfile&, const HardwareProfile&) = default;
};

/// Returns a bundled preset ("v2-lite", "v3") or, if `name_or_path` is not a
/// preset name, parses it as a model config file.
ModelConfig load_model_preset(std::string_view name_or_path);

/// Same lookup for hardware: "a800", "h200", or a hardware config file.
HardwareProfile load_hardware_preset(std::string_view name_or_path);

// Flat `key = value` documents. Lines starting with '#' are comments. Every
// key of the schema must appear once (n_group/topk_group only as a pair);
// unknown or duplicate keys are errors.
std::string to_text(const ModelConfig& config);
std::string to_text(const HardwareProfile& hw);
ModelConfig model_from_text(std::string_view text);
HardwareProfile hardware_from_text(std::string_view text);

/// d_e times the active expert count (the override, when given, must lie in
/// [1, n_e]).
std::int64_t activated_intermediate(const ModelConfig& config,
                                    std::optional<int> n_a_override = std::nullopt);

/// d_a / (d_s + d_a): the share of FFN compute spent in routed experts.
double compute_reduction_upper_bound(const ModelConfig& config);
double compute_reduction_upper_bound(std::int64_t d_a, std::int64_t d_s);

// Comparison of the computed bound with the figure published for a preset.
// The published table rounds to 0.1 %, so a mismatch beyond half a rounding
// step is flagged.
struct ReductionBoundCheck {
  double computed = 0.0;
  std::optional<double> published;
  bool discrepancy = false;
};

ReductionBoundCheck check_reduction_bound(const ModelConfig& config);

}  // namespace moeperf
