#include "moeperf/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "moeperf/error.hpp"
#include "moeperf/roofline.hpp"

namespace moeperf {
namespace {

using Json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ValidationError(fmt::format("{}: '{}' is not an integer", what, text));
  }
  return v;
}

std::optional<double> parse_number(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

std::string knee_cell(const std::optional<std::int64_t>& knee) {
  return knee ? fmt::format("{}", *knee) : std::string{};
}

}  // namespace

OutputFormat parse_output_format(std::string_view text) {
  if (text == "csv") return OutputFormat::csv;
  if (text == "json") return OutputFormat::json;
  throw ValidationError(fmt::format("unknown format '{}' (expected csv or json)", text));
}

TokenRange parse_token_range(std::string_view text) {
  const auto parts = split_fields(text, ':');
  if (parts.size() < 2 || parts.size() > 3) {
    throw ValidationError(fmt::format("range '{}': expected first:last[:step]", text));
  }
  TokenRange r;
  r.first = parse_int(parts[0], "range start");
  r.last = parse_int(parts[1], "range end");
  if (parts.size() == 3) r.step = parse_int(parts[2], "range step");
  if (r.first < 1) throw ValidationError("range: start must be at least 1");
  if (r.last < r.first) throw ValidationError(fmt::format("range '{}' is empty", text));
  if (r.step < 1) throw ValidationError("range: step must be at least 1");
  return r;
}

// ---------------------------------------------------------------- roofline

std::string cmd_roofline(const CommandContext& ctx, const TokenRange& range) {
  const auto& m = ctx.model;
  m.validate();
  const int bpe = m.bytes_per_element;
  const auto ffn_knee = knee_length(m.d, m.d_s, ctx.hw, bpe);
  const auto moe_knee = moe_knee_tokens(m, m.n_a, m.n_e, ctx.hw);

  std::string csv = "L,io_bytes,flops,ai,time_s,time_per_token_us,bound,moe_io_bytes,moe_flops,"
                    "moe_ai,moe_time_s,moe_time_per_token_us,moe_bound,ffn_knee_L,moe_knee_L\n";
  Json rows = Json::array();
  for (std::int64_t L = range.first; L <= range.last; L += range.step) {
    const auto ffn = ffn_estimate({m.d, m.d_s, L}, ctx.hw, bpe);
    const auto moe = moe_layer_estimate(m, L, m.n_a, m.n_e, ctx.hw).total;
    const double Ld = static_cast<double>(L);
    if (ctx.format == OutputFormat::csv) {
      csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", L, ffn.io_bytes, ffn.flops,
                         ffn.ai_elements, ffn.time_s, ffn.time_s / Ld * 1e6, to_string(ffn.bound),
                         moe.io_bytes, moe.flops, moe.ai_elements, moe.time_s, moe.time_s / Ld * 1e6,
                         to_string(moe.bound), knee_cell(ffn_knee), knee_cell(moe_knee));
    } else {
      rows.push_back({{"L", L},
                      {"io_bytes", ffn.io_bytes},
                      {"flops", ffn.flops},
                      {"ai", ffn.ai_elements},
                      {"time_s", ffn.time_s},
                      {"time_per_token_us", ffn.time_s / Ld * 1e6},
                      {"bound", to_string(ffn.bound)},
                      {"moe_io_bytes", moe.io_bytes},
                      {"moe_flops", moe.flops},
                      {"moe_ai", moe.ai_elements},
                      {"moe_time_s", moe.time_s},
                      {"moe_time_per_token_us", moe.time_s / Ld * 1e6},
                      {"moe_bound", to_string(moe.bound)}});
    }
  }
  if (ctx.format == OutputFormat::csv) return csv;
  Json doc;
  doc["model"] = m.name;
  doc["hardware"] = ctx.hw.name;
  doc["ffn_knee_L"] = ffn_knee ? Json(*ffn_knee) : Json(nullptr);
  doc["moe_knee_L"] = moe_knee ? Json(*moe_knee) : Json(nullptr);
  doc["rows"] = std::move(rows);
  return json_text(doc);
}

// ---------------------------------------------------------------- schedule

ScheduleSummary summarize_schedule(const ModelConfig& model, const SkipSchedule& schedule) {
  ScheduleSummary s;
  s.schedule = schedule;
  s.average_active = average_active(schedule);
  s.shape = shape_class(schedule);
  const double full = static_cast<double>(model.d_s) + static_cast<double>(model.n_a) * model.d_e;
  s.compute_fraction = (static_cast<double>(model.d_s) + s.average_active * model.d_e) / full;
  return s;
}

std::string cmd_schedule(const CommandContext& ctx, std::string_view tuple_text, IndexSpace space) {
  ctx.model.validate();
  const auto tuple = parse_skip_tuple(tuple_text);
  const auto summary = summarize_schedule(ctx.model, build_schedule(tuple, ctx.model, space));
  if (ctx.format == OutputFormat::json) {
    Json doc;
    doc["tuple"] = to_string(tuple);
    doc["index_space"] = space == IndexSpace::moe ? "moe" : "global";
    doc["n_layers"] = summary.schedule.n_layers();
    doc["average_active"] = summary.average_active;
    doc["shape"] = to_string(summary.shape);
    doc["compute_fraction"] = summary.compute_fraction;
    doc["warnings"] = summary.schedule.warnings;
    doc["n_a"] = summary.schedule.n_a_per_layer;
    return json_text(doc);
  }
  std::string out;
  out += fmt::format("# tuple: {}\n", to_string(tuple));
  out += fmt::format("# average_active: {:.6f}\n", summary.average_active);
  out += fmt::format("# shape: {}\n", to_string(summary.shape));
  out += fmt::format("# compute_fraction: {:.6f}\n", summary.compute_fraction);
  for (const auto& w : summary.schedule.warnings) out += fmt::format("# warning: {}\n", w);
  out += schedule_to_csv(summary.schedule);
  return out;
}

// ---------------------------------------------------------------- prune

PruneOutput cmd_prune(const CommandContext& ctx, const PruneArgs& args) {
  ctx.model.validate();
  std::optional<RoutingStats> stats;
  if (args.stats_path) stats = RoutingStats::from_json(read_file(*args.stats_path));

  MaskRequest req;
  req.strategy = args.strategy;
  req.keep = args.keep;
  req.n_e = ctx.model.n_e;
  req.n_a = ctx.model.n_a;
  req.n_layers = ctx.model.n_moe_layers();
  req.seed = ctx.seed;
  req.stats = stats ? &*stats : nullptr;

  PruneOutput out;
  out.mask = build_mask(req);
  out.memory_savings_bytes = mask_memory_savings(out.mask, ctx.model);
  out.mask_text = out.mask.to_json();
  if (ctx.format == OutputFormat::json) {
    Json doc;
    doc["strategy"] = to_string(out.mask.strategy);
    doc["keep"] = out.mask.keep;
    doc["n_e"] = out.mask.n_e;
    doc["n_layers"] = out.mask.n_layers();
    doc["memory_savings_bytes"] = out.memory_savings_bytes;
    doc["stats_digest"] = out.mask.stats_digest ? Json(*out.mask.stats_digest) : Json(nullptr);
    out.summary = json_text(doc);
  } else {
    out.summary = fmt::format("strategy,keep,n_e,n_layers,memory_savings_bytes,stats_digest\n{},{},{},{},{},{}\n",
                              to_string(out.mask.strategy), out.mask.keep, out.mask.n_e,
                              out.mask.n_layers(), out.memory_savings_bytes,
                              out.mask.stats_digest.value_or(""));
  }
  return out;
}

// ---------------------------------------------------------------- simulate

namespace {

// Column of the fixture that corresponds to the run's configuration.
std::string default_compare_column(const FixtureTable& fixture, const ModelConfig& model,
                                   const ServingConfig& sc) {
  switch (fixture.source) {
    case FixtureSource::table9: {
      int n_a = model.n_a;
      if (sc.schedule) {
        const auto& v = sc.schedule->n_a_per_layer;
        if (std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) != v.end()) {
          throw ValidationError("compare: table9 needs a uniform schedule or --compare-column");
        }
        n_a = v.front();
      }
      return fmt::format("na{}", n_a);
    }
    case FixtureSource::table13:
      return fmt::format("ne{}", sc.mask ? sc.mask->keep : model.n_e);
    case FixtureSource::table6:
    case FixtureSource::table7:
      return "throughput";
    case FixtureSource::table10_12:
      break;
  }
  throw ValidationError(fmt::format("fixture {} holds accuracies, not throughput", to_string(fixture.source)));
}

}  // namespace

SimulateOutput cmd_simulate(const CommandContext& ctx, const SimulateArgs& args) {
  const auto& model = ctx.model;
  model.validate();
  if (args.tuple && args.uniform_n_a) throw ValidationError("simulate: give either a tuple or --n-a, not both");

  ServingConfig base = args.tuning;
  base.input_tokens = args.input_tokens;
  base.output_tokens = args.output_tokens;
  if (ctx.seed) base.seed = *ctx.seed;
  base.schedule.reset();
  base.mask.reset();

  ServingConfig variant = base;
  if (args.tuple) variant.schedule = build_schedule(parse_skip_tuple(*args.tuple), model, args.index_space);
  if (args.uniform_n_a) variant.schedule = uniform_schedule(*args.uniform_n_a, model.n_moe_layers());
  if (args.mask_path) variant.mask = PruneMask::from_json(read_file(*args.mask_path));

  SimulateOutput out;
  std::optional<FixtureTable> fixture;
  std::vector<std::size_t> fixture_rows;
  std::string column;
  if (args.compare) {
    fixture = load_fixture(*args.compare);
    column = args.compare_column ? *args.compare_column : default_compare_column(*fixture, model, variant);
    fixture->column_index(column);  // fail early on a bad column
    for (std::size_t i = 0; i < fixture->rows.size(); ++i) {
      if (!fixture->anomalies.contains(i)) fixture_rows.push_back(i);
    }
  }

  // Scenario list: pairs of (base, variant) per point.
  std::vector<ServingConfig> points;
  const bool io_sweep = fixture && (fixture->source == FixtureSource::table6 ||
                                    fixture->source == FixtureSource::table7);
  if (fixture && !io_sweep) {
    const auto c = fixture->column_index("concurrency");
    for (auto i : fixture_rows) {
      ServingConfig s = variant;
      s.concurrency = static_cast<int>(fixture->rows[i][c]);
      points.push_back(s);
    }
  } else if (io_sweep) {
    if (args.concurrency.size() != 1) throw ValidationError("compare: input/output sweeps take one concurrency");
    const auto ci = fixture->column_index("input_tokens");
    const auto co = fixture->column_index("output_tokens");
    for (auto i : fixture_rows) {
      ServingConfig s = variant;
      s.concurrency = args.concurrency.front();
      s.input_tokens = static_cast<int>(fixture->rows[i][ci]);
      s.output_tokens = static_cast<int>(fixture->rows[i][co]);
      points.push_back(s);
    }
  } else {
    if (args.concurrency.empty()) throw ValidationError("simulate: empty concurrency list");
    for (int C : args.concurrency) {
      ServingConfig s = variant;
      s.concurrency = C;
      points.push_back(s);
    }
  }

  std::vector<ServingConfig> all;
  for (const auto& p : points) {
    ServingConfig b = p;
    b.schedule.reset();
    b.mask.reset();
    all.push_back(b);
    all.push_back(p);
  }
  const auto reports = simulate_many(model, ctx.hw, all, args.workers);
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.scenarios.push_back(points[i]);
    out.reports.push_back(reports[2 * i + 1]);
    out.speedup_vs_base.push_back(reports[2 * i + 1].tokens_per_second / reports[2 * i].tokens_per_second);
  }

  if (fixture) {
    Comparison cmp;
    cmp.fixture = std::string(to_string(fixture->source));
    cmp.column = column;
    cmp.excluded = fixture->rows.size() - fixture_rows.size();
    const auto col = fixture->column_index(column);
    for (std::size_t k = 0; k < fixture_rows.size(); ++k) {
      cmp.observed.push_back(fixture->rows[fixture_rows[k]][col]);
      cmp.modeled.push_back(out.reports[k].tokens_per_second);
    }
    cmp.spearman = cmp.modeled.size() >= 2 ? spearman(cmp.modeled, cmp.observed) : 1.0;
    out.comparison = std::move(cmp);
  }

  if (ctx.format == OutputFormat::json) {
    Json doc;
    doc["model"] = model.name;
    doc["hardware"] = ctx.hw.name;
    Json rows = Json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& r = out.reports[i];
      rows.push_back({{"concurrency", points[i].concurrency},
                      {"input_tokens", points[i].input_tokens},
                      {"output_tokens", points[i].output_tokens},
                      {"avg_n_a", r.avg_n_a},
                      {"n_e_eff", r.n_e_eff},
                      {"tokens_per_second", r.tokens_per_second},
                      {"speedup_vs_base", out.speedup_vs_base[i]},
                      {"bound_fraction_compute", r.bound_fraction_compute()}});
    }
    doc["rows"] = std::move(rows);
    if (out.comparison) {
      const auto& c = *out.comparison;
      doc["comparison"] = {{"fixture", c.fixture},     {"column", c.column},
                           {"points", c.modeled.size()}, {"excluded_anomalies", c.excluded},
                           {"spearman", c.spearman}};
    }
    out.text = json_text(doc);
    return out;
  }
  out.text = report_csv_header();
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.text += report_csv_row(points[i], out.reports[i], out.speedup_vs_base[i]);
  }
  if (out.comparison) {
    const auto& c = *out.comparison;
    out.text += fmt::format("# compare fixture={} column={} points={} excluded_anomalies={} spearman={:.6f}\n",
                            c.fixture, c.column, c.modeled.size(), c.excluded, c.spearman);
  }
  return out;
}

// ---------------------------------------------------------------- verify

VerifyReport cmd_verify(const VerifyOptions& options) { return run_property_suite(options); }

// ---------------------------------------------------------------- comm-plan

PlanReport comm_plan(const CommandContext& ctx, const CommPlanArgs& args) {
  ctx.model.validate();
  ctx.hw.validate();
  ParallelConfig cfg;
  cfg.n_devices = args.n_devices;
  cfg.tokens = args.tokens;
  cfg.d = ctx.model.d;
  cfg.n_a = args.n_a.value_or(ctx.model.n_a);
  cfg.bytes_per_element = ctx.model.bytes_per_element;
  cfg.validate();
  if (cfg.n_a < 1 || cfg.n_a > ctx.model.n_e) {
    throw ValidationError(fmt::format("comm-plan: n_a={} outside [1, {}]", cfg.n_a, ctx.model.n_e));
  }
  int groups = args.groups_touched.value_or(
      ctx.model.group ? ctx.model.group->topk_group : std::min(cfg.n_a, cfg.n_devices));

  const auto tp = tp_comm_volume(cfg);
  const auto ep = ep_comm_volume(cfg);
  const auto gl = group_limited_ep_volume(cfg, groups);

  PlanReport report;
  report.n_devices = cfg.n_devices;
  auto add = [&](std::string scheme, Placement placement, std::int64_t volume) {
    ParallelConfig c = cfg;
    c.placement = placement;
    PlanRow row;
    row.scheme = std::move(scheme);
    row.placement = placement;
    row.volume_elements = volume;
    row.volume_bytes = static_cast<double>(volume) * cfg.bytes_per_element;
    row.time_s = comm_time(volume, c, ctx.hw);
    row.volume_ratio_vs_tp = static_cast<double>(volume) / static_cast<double>(tp);
    report.rows.push_back(std::move(row));
  };
  add("TP", Placement::intra_node, tp);
  add("TP", Placement::inter_node, tp);
  add("EP", Placement::intra_node, ep);
  add("EP", Placement::inter_node, ep);
  add(fmt::format("group-limited-EP({})", groups), Placement::inter_node, gl);
  const double tp_intra = report.rows.front().time_s;
  for (auto& r : report.rows) r.ratio_vs_tp_intra = r.time_s / tp_intra;
  return report;
}

std::string cmd_comm_plan(const CommandContext& ctx, const CommPlanArgs& args) {
  const auto report = comm_plan(ctx, args);
  if (ctx.format == OutputFormat::json) {
    Json rows = Json::array();
    for (const auto& r : report.rows) {
      rows.push_back({{"n_d", report.n_devices},
                      {"scheme", r.scheme},
                      {"placement", to_string(r.placement)},
                      {"volume_bytes", r.volume_bytes},
                      {"time_s", r.time_s},
                      {"volume_ratio_vs_tp", r.volume_ratio_vs_tp},
                      {"ratio_vs_tp_intra", r.ratio_vs_tp_intra}});
    }
    return json_text(Json{{"rows", rows}});
  }
  std::string out = "n_d,scheme,placement,volume_bytes,time_s,volume_ratio_vs_tp,ratio_vs_tp_intra\n";
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", report.n_devices, r.scheme, to_string(r.placement),
                       r.volume_bytes, r.time_s, r.volume_ratio_vs_tp, r.ratio_vs_tp_intra);
  }
  return out;
}

// ---------------------------------------------------------------- aggregate

BenchmarkAggregate aggregate_benchmark_scores(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("aggregate: no scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("aggregate: non-finite score");
  }
  BenchmarkAggregate a;
  a.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  a.delta_vs_baseline = a.mean - kGuessBaseline;
  return a;
}

std::vector<std::string> default_task_columns() {
  return {"arc_c", "arc_e", "boolq", "obqa", "rte", "winogrande"};
}

std::string cmd_aggregate(const CommandContext& ctx, std::string_view id_or_path,
                          std::span<const std::string> task_columns) {
  std::string text;
  bool is_fixture = false;
  for (auto s : all_fixture_sources()) {
    if (to_string(s) == id_or_path) {
      text = std::string(bundled_fixture_text(s));
      is_fixture = true;
    }
  }
  if (!is_fixture) text = read_file(std::string(id_or_path));

  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_fields(line, ',');
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) throw ValidationError("aggregate: ragged CSV row");
    rows.push_back(std::move(fields));
  }
  if (header.empty()) throw ValidationError("aggregate: missing header");

  std::vector<std::size_t> task_idx;
  for (const auto& t : task_columns) {
    const auto it = std::find(header.begin(), header.end(), t);
    if (it == header.end()) throw ValidationError(fmt::format("aggregate: missing task column '{}'", t));
    task_idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  const auto avg_it = std::find(header.begin(), header.end(), "avg");
  const std::optional<std::size_t> avg_idx =
      avg_it == header.end() ? std::nullopt : std::optional<std::size_t>(avg_it - header.begin());
  std::vector<std::size_t> label_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (std::find(task_idx.begin(), task_idx.end(), i) == task_idx.end() && avg_idx != i) {
      label_idx.push_back(i);
    }
  }

  std::vector<std::string> out_header;
  for (auto i : label_idx) out_header.push_back(header[i]);
  for (const char* c : {"mean", "delta_vs_36", "reported_avg", "avg_mismatch"}) out_header.emplace_back(c);
  std::string csv = fmt::format("{}\n", fmt::join(out_header, ","));
  Json jrows = Json::array();
  for (const auto& r : rows) {
    std::vector<double> scores;
    for (auto i : task_idx) {
      const auto v = parse_number(r[i]);
      if (!v) throw ValidationError(fmt::format("aggregate: non-numeric score '{}'", r[i]));
      scores.push_back(*v);
    }
    const auto agg = aggregate_benchmark_scores(scores);
    std::optional<double> reported;
    if (avg_idx) {
      reported = parse_number(r[*avg_idx]);
      if (!reported) throw ValidationError(fmt::format("aggregate: non-numeric avg '{}'", r[*avg_idx]));
    }
    // The reported average carries one decimal; anything further than half a
    // step from the recomputed mean cannot be a rounding of it.
    const bool mismatch = reported && std::abs(*reported - agg.mean) > 0.05 + 1e-9;
    std::vector<std::string> cells;
    for (auto i : label_idx) cells.push_back(r[i]);
    cells.push_back(fmt::format("{:.4f}", agg.mean));
    cells.push_back(fmt::format("{:.4f}", agg.delta_vs_baseline));
    cells.push_back(reported ? r[*avg_idx] : "");
    cells.push_back(mismatch ? "1" : "0");
    csv += fmt::format("{}\n", fmt::join(cells, ","));
    Json jr;
    for (auto i : label_idx) jr[header[i]] = r[i];
    jr["mean"] = agg.mean;
    jr["delta_vs_36"] = agg.delta_vs_baseline;
    jr["reported_avg"] = reported ? Json(*reported) : Json(nullptr);
    jr["avg_mismatch"] = mismatch;
    jrows.push_back(std::move(jr));
  }
  return ctx.format == OutputFormat::json ? json_text(Json{{"rows", jrows}}) : csv;
}

}  // namespace moeperf
