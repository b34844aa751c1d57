#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeperf/fixtures.hpp"
#include "moeperf/model_config.hpp"
#include "moeperf/parallel_comm.hpp"
#include "moeperf/pruning.hpp"
#include "moeperf/serving_sim.hpp"
#include "moeperf/skip_schedule.hpp"
#include "moeperf/verify.hpp"

namespace moeperf {

// Library side of the command-line tool. Each command returns its rendered
// output so the binary only parses flags and writes files.

enum class OutputFormat { csv, json };

OutputFormat parse_output_format(std::string_view text);

struct CommandContext {
  ModelConfig model;
  HardwareProfile hw;
  std::optional<std::uint64_t> seed;
  OutputFormat format = OutputFormat::csv;
};

/// Parses "a:b" or "a:b:step" (inclusive, a >= 1, b >= a).
struct TokenRange {
  std::int64_t first = 1;
  std::int64_t last = 1;
  std::int64_t step = 1;
};
TokenRange parse_token_range(std::string_view text);

// ---- roofline ----

/// One row per L: FFN columns (d_i = d_s) then MoE columns at the model's
/// n_a and n_e, plus both knees repeated on every row.
std::string cmd_roofline(const CommandContext& ctx, const TokenRange& range);

// ---- schedule ----

struct ScheduleSummary {
  SkipSchedule schedule;
  double average_active = 0.0;
  ShapeClass shape = ShapeClass::constant;
  // FFN compute of the schedule relative to running every layer at n_a.
  double compute_fraction = 0.0;
};

ScheduleSummary summarize_schedule(const ModelConfig& model, const SkipSchedule& schedule);
std::string cmd_schedule(const CommandContext& ctx, std::string_view tuple_text, IndexSpace space);

// ---- prune ----

struct PruneArgs {
  PruneStrategy strategy = PruneStrategy::first_half;
  int keep = 0;
  std::optional<std::string> stats_path;
};

struct PruneOutput {
  PruneMask mask;
  std::int64_t memory_savings_bytes = 0;
  std::string mask_text;  // JSON mask file
  std::string summary;    // rendered in ctx.format
};

PruneOutput cmd_prune(const CommandContext& ctx, const PruneArgs& args);

// ---- simulate ----

struct SimulateArgs {
  std::vector<int> concurrency{1};
  int input_tokens = 1024;
  int output_tokens = 1024;
  std::optional<std::string> tuple;  // "b,h,e,p"
  IndexSpace index_space = IndexSpace::moe;
  std::optional<int> uniform_n_a;
  std::optional<std::string> mask_path;
  std::optional<std::string> compare;  // fixture id or path
  std::optional<std::string> compare_column;
  ServingConfig tuning;  // overhead, KV coefficient, efficiency, distinct mode
  int workers = 1;
};

struct Comparison {
  std::string fixture;
  std::string column;
  std::vector<double> modeled;
  std::vector<double> observed;
  std::size_t excluded = 0;
  double spearman = 0.0;
};

struct SimulateOutput {
  std::vector<ServingConfig> scenarios;
  std::vector<ThroughputReport> reports;
  std::vector<double> speedup_vs_base;
  std::optional<Comparison> comparison;
  std::string text;
};

SimulateOutput cmd_simulate(const CommandContext& ctx, const SimulateArgs& args);

// ---- verify ----

VerifyReport cmd_verify(const VerifyOptions& options);

// ---- comm-plan ----

struct CommPlanArgs {
  int n_devices = 8;
  std::int64_t tokens = 1024;
  std::optional<int> n_a;
  std::optional<int> groups_touched;
};

struct PlanRow {
  std::string scheme;
  Placement placement = Placement::intra_node;
  std::int64_t volume_elements = 0;
  double volume_bytes = 0.0;
  double time_s = 0.0;
  double volume_ratio_vs_tp = 0.0;
  double ratio_vs_tp_intra = 0.0;  // time ratio
};

struct PlanReport {
  int n_devices = 0;
  std::vector<PlanRow> rows;  // TP-intra, TP-inter, EP-intra, EP-inter, group-limited EP
};

PlanReport comm_plan(const CommandContext& ctx, const CommPlanArgs& args);
std::string cmd_comm_plan(const CommandContext& ctx, const CommPlanArgs& args);

// ---- aggregate ----

inline constexpr double kGuessBaseline = 36.0;

struct BenchmarkAggregate {
  double mean = 0.0;
  double delta_vs_baseline = 0.0;  // mean - 36
};

BenchmarkAggregate aggregate_benchmark_scores(std::span<const double> scores);

/// Reads a CSV (or fixture id) with task columns; every other column except
/// `avg` becomes part of the row label. A reported `avg` column is compared
/// with the recomputed mean at one decimal.
std::string cmd_aggregate(const CommandContext& ctx, std::string_view id_or_path,
                          std::span<const std::string> task_columns);

std::vector<std::string> default_task_columns();

}  // namespace moeperf
