// moeperf: command-line front end for the MoE inference performance models.
//
// Exit codes: 0 success, 1 validation or usage error, 2 property-suite failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "moeperf/commands.hpp"
#include "moeperf/error.hpp"
#include "moeperf/toy_moe.hpp"

namespace {

using namespace moeperf;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", out_path));
  out << text;
}

DistinctMode parse_distinct(const std::string& text) {
  if (text == "expected") return DistinctMode::expected;
  if (text == "sampled") return DistinctMode::sampled;
  throw ValidationError(fmt::format("unknown distinct mode '{}'", text));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analytical performance models for fine-grained mixture-of-experts inference"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string model_name = "v2-lite";
  std::string hw_name = "a800";
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::string format = "csv";
  app.add_option("--model", model_name, "Model preset (v2-lite, v3) or config file")->capture_default_str();
  app.add_option("--hw", hw_name, "Hardware preset (a800, h200) or config file")->capture_default_str();
  app.add_option("--out", out_path, "Write the main output to this file instead of stdout");
  app.add_option("--seed", seed, "Seed for random strategies and sampled modes");
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

  auto* roofline = app.add_subcommand("roofline", "FFN and MoE roofline curves over a token range");
  std::string range = "1:4096";
  roofline->add_option("--range", range, "first:last[:step]")->capture_default_str();

  auto* schedule = app.add_subcommand("schedule", "Expand a (b,h,e,p) skip tuple into a per-layer schedule");
  std::string tuple;
  std::string index_space = "moe";
  schedule->add_option("tuple", tuple, "b,h,e,p")->required();
  schedule->add_option("--index-space", index_space, "Whether p counts MoE layers or all layers")
      ->check(CLI::IsMember({"moe", "global"}))
      ->capture_default_str();

  auto* prune = app.add_subcommand("prune", "Build an expert pruning mask");
  std::string strategy;
  int keep = 0;
  std::string stats_path;
  prune->add_option("--strategy", strategy,
                    "random, odd, even, first_half, last_half, activate_count, soft_count")
      ->required();
  prune->add_option("--keep", keep, "Experts retained per layer")->required();
  prune->add_option("--stats", stats_path, "Routing statistics JSON (count strategies)");

  auto* simulate = app.add_subcommand("simulate", "Lockstep serving throughput simulation");
  std::vector<int> concurrency{1};
  SimulateArgs sim;
  std::string sim_tuple;
  std::string sim_space = "moe";
  std::optional<int> sim_n_a;
  std::string mask_path;
  std::string compare;
  std::string compare_column;
  std::string distinct = "expected";
  simulate->add_option("--concurrency", concurrency, "Comma-separated concurrency list")
      ->delimiter(',')
      ->capture_default_str();
  simulate->add_option("--input", sim.input_tokens, "Input tokens per request")->capture_default_str();
  simulate->add_option("--output", sim.output_tokens, "Output tokens per request")->capture_default_str();
  simulate->add_option("--tuple", sim_tuple, "Skip tuple b,h,e,p for the variant");
  simulate->add_option("--index-space", sim_space, "Index space of the tuple's p")
      ->check(CLI::IsMember({"moe", "global"}))
      ->capture_default_str();
  simulate->add_option("--n-a", sim_n_a, "Uniform active-expert count for the variant");
  simulate->add_option("--mask", mask_path, "Pruning mask JSON for the variant");
  simulate->add_option("--compare", compare, "Fixture id (table6, table7, table9, table13) or file");
  simulate->add_option("--compare-column", compare_column, "Fixture column to compare against");
  simulate->add_option("--overhead", sim.tuning.overhead_per_step, "Seconds added per step")->capture_default_str();
  simulate->add_option("--attention-coeff", sim.tuning.attention_coeff, "KV bytes per context token per layer")
      ->capture_default_str();
  simulate->add_option("--compute-efficiency", sim.tuning.compute_efficiency,
                       "Achieved fraction of peak FLOP/s")
      ->capture_default_str();
  simulate->add_option("--distinct", distinct, "Distinct-expert count: expected or sampled")
      ->check(CLI::IsMember({"expected", "sampled"}))
      ->capture_default_str();
  simulate->add_option("--workers", sim.workers, "Threads for the scenario sweep")->capture_default_str();

  auto* verify = app.add_subcommand("verify", "Run the toy executor and router property suite");
  std::string weights_path;
  std::string dump_path;
  verify->add_option("--weights", weights_path, "Check this weight dump instead of a generated layer");
  verify->add_option("--dump-weights", dump_path, "Write a generated toy layer dump and exit");

  auto* comm = app.add_subcommand("comm-plan", "TP versus EP communication report");
  CommPlanArgs plan;
  comm->add_option("--devices", plan.n_devices, "Device count n_d")->capture_default_str();
  comm->add_option("--tokens", plan.tokens, "Tokens per step L")->capture_default_str();
  comm->add_option("--n-a", plan.n_a, "Active experts (default: model n_a)");
  comm->add_option("--groups", plan.groups_touched, "Device groups touched per token");

  auto* aggregate = app.add_subcommand("aggregate", "Mean benchmark score and delta to the guessing baseline");
  std::string agg_input;
  std::vector<std::string> tasks = default_task_columns();
  aggregate->add_option("--input", agg_input, "CSV file or fixture id")->required();
  aggregate->add_option("--tasks", tasks, "Task columns")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (verify->parsed()) {
      if (!dump_path.empty()) {
        RouterConfig cfg;
        cfg.n_e = 16;
        cfg.n_a = 6;
        save_layer(random_layer({8, 4, 12, Activation::silu}, cfg, seed.value_or(0)), dump_path);
        return 0;
      }
      VerifyOptions opts;
      opts.seed = seed.value_or(0);
      if (!weights_path.empty()) opts.weight_dump = weights_path;
      const auto report = cmd_verify(opts);
      emit(report.summary(), out_path);
      return report.all_passed() ? 0 : 2;
    }

    CommandContext ctx;
    ctx.model = load_model_preset(model_name);
    ctx.hw = load_hardware_preset(hw_name);
    ctx.seed = seed;
    ctx.format = parse_output_format(format);

    if (roofline->parsed()) {
      emit(cmd_roofline(ctx, parse_token_range(range)), out_path);
    } else if (schedule->parsed()) {
      emit(cmd_schedule(ctx, tuple, parse_index_space(index_space)), out_path);
    } else if (prune->parsed()) {
      PruneArgs args;
      args.strategy = parse_prune_strategy(strategy);
      args.keep = keep;
      if (!stats_path.empty()) args.stats_path = stats_path;
      const auto result = cmd_prune(ctx, args);
      if (out_path.empty()) {
        emit(result.mask_text, "");
        std::fputs(result.summary.c_str(), stderr);
      } else {
        emit(result.mask_text, out_path);
        emit(result.summary, "");
      }
    } else if (simulate->parsed()) {
      sim.concurrency = concurrency;
      if (!sim_tuple.empty()) sim.tuple = sim_tuple;
      sim.index_space = parse_index_space(sim_space);
      sim.uniform_n_a = sim_n_a;
      if (!mask_path.empty()) sim.mask_path = mask_path;
      if (!compare.empty()) sim.compare = compare;
      if (!compare_column.empty()) sim.compare_column = compare_column;
      sim.tuning.distinct_mode = parse_distinct(distinct);
      emit(cmd_simulate(ctx, sim).text, out_path);
    } else if (comm->parsed()) {
      emit(cmd_comm_plan(ctx, plan), out_path);
    } else if (aggregate->parsed()) {
      emit(cmd_aggregate(ctx, agg_input, tasks), out_path);
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    // Malformed JSON inputs and similar surface here.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
