#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeperf/model_config.hpp"

namespace moeperf {

// Dense FFN (GLU) problem: hidden size d, intermediate size d_i, and L tokens
// processed in parallel.
struct RooflineQuery {
  std::int64_t d = 1;
  std::int64_t d_i = 1;
  std::int64_t tokens = 1;

  void validate() const;
};

enum class Bound { memory, compute };

std::string_view to_string(Bound bound);

struct RooflineEstimate {
  double io_elements = 0.0;
  double io_bytes = 0.0;
  double flops = 0.0;
  double ai_elements = 0.0;  // FLOP per element moved
  double time_s = 0.0;
  Bound bound = Bound::compute;
};

// Element counts are exact integers for every realistic size, so the formulas
// return int64 and only the ratio is a double.

/// 3*d_i*d weight elements plus 2*L*(d + d_i) activation elements.
std::int64_t ffn_io(const RooflineQuery& q);

/// 6*L*d_i*d.
std::int64_t ffn_flops(const RooflineQuery& q);

double arithmetic_intensity(const RooflineQuery& q);

/// Limit of arithmetic_intensity as L grows: 3*d_i*d / (d_i + d).
double arithmetic_intensity_limit(std::int64_t d, std::int64_t d_i);

/// max(io_bytes / mem_bw, flops / peak_flops); a tie counts as compute-bound.
RooflineEstimate latency(double io_bytes, double flops, const HardwareProfile& hw);

/// Dense FFN estimate with element counts converted at `bytes_per_element`.
RooflineEstimate ffn_estimate(const RooflineQuery& q, const HardwareProfile& hw,
                              int bytes_per_element = 2);

/// Smallest L at which the FFN's compute time reaches its memory time, or
/// nullopt if compute never catches up.
std::optional<std::int64_t> knee_length(std::int64_t d, std::int64_t d_i,
                                        const HardwareProfile& hw, int bytes_per_element = 2);

/// Large-size approximation of the knee, peak_flops * bytes_per_element / (2 * mem_bw).
double knee_length_approx(const HardwareProfile& hw, int bytes_per_element = 2);

// Cost breakdown of one MoE layer. Router terms are kept separate so the
// expert-only parts can be compared against a dense FFN exactly.
struct MoeLayerEstimate {
  double distinct_experts = 0.0;
  double expert_flops = 0.0;
  double router_flops = 0.0;
  double weight_elements = 0.0;      // shared + routed expert weights
  double router_elements = 0.0;      // router matrix
  double activation_elements = 0.0;
  double extra_bytes = 0.0;          // caller-supplied traffic, e.g. KV cache
  RooflineEstimate total;
};

struct MoeLayerQuery {
  std::int64_t tokens = 1;
  int n_a_eff = 1;
  int n_e_eff = 1;
  // Per-expert routing probabilities (size n_e_eff). Empty means uniform.
  std::span<const double> popularity;
  // Sampled distinct count replacing the expectation when set.
  std::optional<double> distinct_override;
  double extra_bytes = 0.0;
};

/// Shared expert + E_distinct routed experts + router weights, with
/// activation traffic 2*T*(d + d_s + n_a_eff*d_e).
MoeLayerEstimate moe_layer_estimate(const ModelConfig& config, const MoeLayerQuery& q,
                                    const HardwareProfile& hw);

MoeLayerEstimate moe_layer_estimate(const ModelConfig& config, std::int64_t tokens, int n_a_eff,
                                    int n_e_eff, const HardwareProfile& hw);

/// Smallest T at which the MoE layer is compute-bound (doubling then
/// bisection), or nullopt if none up to `max_tokens`.
std::optional<std::int64_t> moe_knee_tokens(const ModelConfig& config, int n_a_eff, int n_e_eff,
                                            const HardwareProfile& hw,
                                            std::int64_t max_tokens = std::int64_t{1} << 40);

}  // namespace moeperf
