#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moeperf/model_config.hpp"
#include "moeperf/pruning.hpp"
#include "moeperf/skip_schedule.hpp"

namespace moeperf {

enum class DistinctMode { expected, sampled };

// Lockstep benchmark: `concurrency` requests each prefill `input_tokens` in one
// batch, then decode `output_tokens` steps together.
//
// The defaults are shape calibration, not measurements: 1152 B per context
// token per layer is a 576-element MLA cache entry at two bytes, and the
// serving kernels are assumed to reach 35 % of the nominal peak FLOP rate.
struct ServingConfig {
  int concurrency = 1;
  int input_tokens = 1024;
  int output_tokens = 1024;
  std::optional<SkipSchedule> schedule;
  std::optional<PruneMask> mask;
  double overhead_per_step = 2e-3;   // seconds, added once per prefill and per decode step
  double attention_coeff = 1152.0;   // KV bytes per context token per layer
  double compute_efficiency = 0.35;  // achieved fraction of hw.peak_flops
  DistinctMode distinct_mode = DistinctMode::expected;
  std::uint64_t seed = 0;  // sampled mode only

  void validate(const ModelConfig& model) const;
};

struct ThroughputReport {
  double tokens_per_second = 0.0;
  std::int64_t total_tokens = 0;
  double prefill_time_s = 0.0;
  double decode_time_s = 0.0;
  double total_time_s = 0.0;
  std::int64_t prefill_layers_compute = 0;
  std::int64_t prefill_layers_memory = 0;
  std::int64_t decode_layers_compute = 0;  // (step, layer) pairs
  std::int64_t decode_layers_memory = 0;
  double decode_expert_flops = 0.0;  // routed + shared expert FLOPs of all decode steps
  double avg_n_a = 0.0;
  int n_e_eff = 0;

  double bound_fraction_compute() const;
};

ThroughputReport simulate_throughput(const ModelConfig& model, const HardwareProfile& hw,
                                     const ServingConfig& sc);

/// Runs scenarios on `workers` threads; results keep the input order.
std::vector<ThroughputReport> simulate_many(const ModelConfig& model, const HardwareProfile& hw,
                                            const std::vector<ServingConfig>& scenarios,
                                            int workers = 1);

struct ServingVariant {
  std::string name;
  std::optional<SkipSchedule> schedule;
  std::optional<PruneMask> mask;
};

struct SpeedupRow {
  int concurrency = 0;
  std::string variant;
  double throughput = 0.0;
  double speedup = 0.0;  // variant / base at the same concurrency
  ThroughputReport report;
};

/// For each concurrency, simulates the base and every variant (which replace
/// only the base's schedule and mask).
std::vector<SpeedupRow> speedup_curve(const ModelConfig& model, const HardwareProfile& hw,
                                      const ServingConfig& base,
                                      const std::vector<ServingVariant>& variants,
                                      const std::vector<int>& concurrencies, int workers = 1);

/// Smallest concurrency at which more than half of the decode (step, layer)
/// evaluations are compute-bound; nullopt if none up to `max_concurrency`.
std::optional<int> knee_concurrency(const ModelConfig& model, const HardwareProfile& hw,
                                    const ServingConfig& sc_template,
                                    int max_concurrency = 1 << 20);

/// CSV columns: concurrency, input_tokens, output_tokens, avg_n_a, n_e_eff,
/// tokens_per_second, speedup_vs_base, bound_fraction_compute.
std::string report_csv_header();
std::string report_csv_row(const ServingConfig& sc, const ThroughputReport& r,
                           double speedup_vs_base);

}  // namespace moeperf
