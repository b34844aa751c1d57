#include "moeperf/roofline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "moeperf/error.hpp"
#include "moeperf/routing.hpp"

namespace moeperf {

void RooflineQuery::validate() const {
  if (d < 1 || d_i < 1 || tokens < 1) {
    throw ValidationError(
        fmt::format("roofline query needs d, d_i, L >= 1 (got {}, {}, {})", d, d_i, tokens));
  }
}

std::string_view to_string(Bound bound) { return bound == Bound::memory ? "memory" : "compute"; }

std::int64_t ffn_io(const RooflineQuery& q) {
  q.validate();
  return 3 * q.d_i * q.d + 2 * q.tokens * (q.d + q.d_i);
}

std::int64_t ffn_flops(const RooflineQuery& q) {
  q.validate();
  return 6 * q.tokens * q.d_i * q.d;
}

double arithmetic_intensity(const RooflineQuery& q) {
  return static_cast<double>(ffn_flops(q)) / static_cast<double>(ffn_io(q));
}

double arithmetic_intensity_limit(std::int64_t d, std::int64_t d_i) {
  return 3.0 * static_cast<double>(d_i) * static_cast<double>(d) / static_cast<double>(d_i + d);
}

RooflineEstimate latency(double io_bytes, double flops, const HardwareProfile& hw) {
  hw.validate();
  RooflineEstimate est;
  est.io_bytes = io_bytes;
  est.flops = flops;
  const double memory_time = io_bytes / hw.mem_bw;
  const double compute_time = flops / hw.peak_flops;
  est.bound = compute_time >= memory_time ? Bound::compute : Bound::memory;
  est.time_s = std::max(memory_time, compute_time);
  return est;
}

RooflineEstimate ffn_estimate(const RooflineQuery& q, const HardwareProfile& hw,
                              int bytes_per_element) {
  const auto io = static_cast<double>(ffn_io(q));
  const auto flops = static_cast<double>(ffn_flops(q));
  RooflineEstimate est = latency(io * bytes_per_element, flops, hw);
  est.io_elements = io;
  est.ai_elements = flops / io;
  return est;
}

std::optional<std::int64_t> knee_length(std::int64_t d, std::int64_t d_i,
                                        const HardwareProfile& hw, int bytes_per_element) {
  hw.validate();
  RooflineQuery{d, d_i, 1}.validate();
  // compute(L) >= memory(L)  <=>  L * (6*d_i*d/peak - 2*(d+d_i)*b/bw) >= 3*d_i*d*b/bw
  const double per_byte = bytes_per_element / hw.mem_bw;
  const double slope = 6.0 * d_i * d / hw.peak_flops - 2.0 * (d + d_i) * per_byte;
  const double fixed = 3.0 * d_i * d * per_byte;
  if (!(slope > 0.0)) return std::nullopt;
  const double bound = fixed / slope;
  if (bound > static_cast<double>(std::numeric_limits<std::int64_t>::max() / 8)) return std::nullopt;
  auto L = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(bound)) - 1);
  // Settle the last step with the exact comparison used by latency().
  while (ffn_estimate({d, d_i, L}, hw, bytes_per_element).bound != Bound::compute) ++L;
  while (L > 1 && ffn_estimate({d, d_i, L - 1}, hw, bytes_per_element).bound == Bound::compute) --L;
  return L;
}

double knee_length_approx(const HardwareProfile& hw, int bytes_per_element) {
  return hw.peak_flops * bytes_per_element / (2.0 * hw.mem_bw);
}

MoeLayerEstimate moe_layer_estimate(const ModelConfig& config, const MoeLayerQuery& q,
                                    const HardwareProfile& hw) {
  if (q.tokens < 1) throw ValidationError("moe estimate: token count must be at least 1");
  if (q.n_a_eff < 1 || q.n_a_eff > q.n_e_eff || q.n_e_eff > config.n_e) {
    throw ValidationError(fmt::format("moe estimate: need 1 <= n_a_eff={} <= n_e_eff={} <= n_e={}",
                                      q.n_a_eff, q.n_e_eff, config.n_e));
  }
  const double d = static_cast<double>(config.d);
  const double d_e = static_cast<double>(config.d_e);
  const double d_s = static_cast<double>(config.d_s);
  const double T = static_cast<double>(q.tokens);

  MoeLayerEstimate est;
  if (q.distinct_override) {
    est.distinct_experts = *q.distinct_override;
  } else if (!q.popularity.empty()) {
    if (static_cast<int>(q.popularity.size()) != q.n_e_eff) {
      throw ValidationError("moe estimate: popularity length differs from n_e_eff");
    }
    est.distinct_experts = expected_distinct_experts(q.popularity, q.n_a_eff, q.tokens);
  } else {
    est.distinct_experts = expected_distinct_experts(q.n_e_eff, q.n_a_eff, q.tokens);
  }
  est.expert_flops = 6.0 * T * (d_s + q.n_a_eff * d_e) * d;
  est.router_flops = 2.0 * T * q.n_e_eff * d;
  est.weight_elements = 3.0 * d_s * d + 3.0 * d_e * d * est.distinct_experts;
  est.router_elements = q.n_e_eff * d;
  est.activation_elements = 2.0 * T * (d + d_s + q.n_a_eff * d_e);
  est.extra_bytes = q.extra_bytes;

  const double io = est.weight_elements + est.router_elements + est.activation_elements;
  const double flops = est.expert_flops + est.router_flops;
  est.total = latency(io * config.bytes_per_element + q.extra_bytes, flops, hw);
  est.total.io_elements = io;
  est.total.ai_elements = flops / io;
  return est;
}

MoeLayerEstimate moe_layer_estimate(const ModelConfig& config, std::int64_t tokens, int n_a_eff,
                                    int n_e_eff, const HardwareProfile& hw) {
  MoeLayerQuery q;
  q.tokens = tokens;
  q.n_a_eff = n_a_eff;
  q.n_e_eff = n_e_eff;
  return moe_layer_estimate(config, q, hw);
}

std::optional<std::int64_t> moe_knee_tokens(const ModelConfig& config, int n_a_eff, int n_e_eff,
                                            const HardwareProfile& hw, std::int64_t max_tokens) {
  hw.validate();
  auto compute_bound = [&](std::int64_t T) {
    return moe_layer_estimate(config, T, n_a_eff, n_e_eff, hw).total.bound == Bound::compute;
  };
  std::int64_t hi = 1;
  while (!compute_bound(hi)) {
    if (hi >= max_tokens) return std::nullopt;
    hi = std::min(max_tokens, hi * 2);
  }
  std::int64_t lo = hi / 2;
  if (hi == 1) return 1;
  while (hi - lo > 1) {
    const auto mid = lo + (hi - lo) / 2;
    (compute_bound(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace moeperf
