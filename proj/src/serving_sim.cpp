#include "moeperf/serving_sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "moeperf/error.hpp"
#include "moeperf/rng.hpp"
#include "moeperf/roofline.hpp"
#include "moeperf/routing.hpp"

namespace moeperf {
namespace {

// Per-layer inputs that stay fixed for a whole run.
struct LayerPlan {
  bool dense = false;
  int n_a = 0;
  int n_e_eff = 0;
};

std::vector<LayerPlan> plan_layers(const ModelConfig& model, const ServingConfig& sc) {
  std::vector<LayerPlan> plan;
  const int n_e_eff = sc.mask ? sc.mask->keep : model.n_e;
  for (int l = 0; l < model.n_layers_dense; ++l) plan.push_back({true, 0, 0});
  for (int l = 0; l < model.n_moe_layers(); ++l) {
    const int n_a = sc.schedule ? sc.schedule->n_a_per_layer[l] : model.n_a;
    plan.push_back({false, n_a, n_e_eff});
  }
  return plan;
}

struct StepCost {
  double time_s = 0.0;
  std::int64_t compute_layers = 0;
  std::int64_t memory_layers = 0;
  double expert_flops = 0.0;
};

// One forward pass over every layer for `tokens` tokens with `kv_bytes` of
// attention-cache traffic per layer. Dense layers use d_s as their FFN size.
StepCost step_cost(const ModelConfig& model, const HardwareProfile& hw,
                   const std::vector<LayerPlan>& plan, std::int64_t tokens, double kv_bytes,
                   const ServingConfig& sc, std::uint64_t step_index) {
  StepCost cost;
  for (std::size_t l = 0; l < plan.size(); ++l) {
    const auto& layer = plan[l];
    RooflineEstimate est;
    if (layer.dense) {
      const RooflineQuery q{model.d, model.d_s, tokens};
      const auto io = static_cast<double>(ffn_io(q));
      const auto flops = static_cast<double>(ffn_flops(q));
      est = latency(io * model.bytes_per_element + kv_bytes, flops, hw);
      cost.expert_flops += flops;
    } else {
      MoeLayerQuery q;
      q.tokens = tokens;
      q.n_a_eff = layer.n_a;
      q.n_e_eff = layer.n_e_eff;
      q.extra_bytes = kv_bytes;
      if (sc.distinct_mode == DistinctMode::sampled) {
        const std::uint64_t stream = step_index * plan.size() + l;
        const auto draw = sample_distinct_experts(layer.n_e_eff, layer.n_a, tokens, 1,
                                                  mix64(sc.seed) ^ mix64(stream));
        q.distinct_override = draw.mean;
      }
      const auto moe = moe_layer_estimate(model, q, hw);
      est = moe.total;
      cost.expert_flops += moe.expert_flops;
    }
    cost.time_s += est.time_s;
    (est.bound == Bound::compute ? cost.compute_layers : cost.memory_layers) += 1;
  }
  cost.time_s += sc.overhead_per_step;
  return cost;
}

}  // namespace

void ServingConfig::validate(const ModelConfig& model) const {
  model.validate();
  if (concurrency < 1 || input_tokens < 1 || output_tokens < 1) {
    throw ValidationError("serving: concurrency, input_tokens and output_tokens must be >= 1");
  }
  if (!(overhead_per_step >= 0.0) || !std::isfinite(overhead_per_step)) {
    throw ValidationError("serving: overhead_per_step must be >= 0");
  }
  if (!(attention_coeff >= 0.0) || !std::isfinite(attention_coeff)) {
    throw ValidationError("serving: attention_coeff must be >= 0");
  }
  if (!(compute_efficiency > 0.0) || compute_efficiency > 1.0) {
    throw ValidationError("serving: compute_efficiency must lie in (0, 1]");
  }
  if (schedule) {
    if (schedule->n_layers() != model.n_moe_layers()) {
      throw ValidationError(fmt::format("serving: schedule has {} layers, model has {} MoE layers",
                                        schedule->n_layers(), model.n_moe_layers()));
    }
    const int limit = mask ? mask->keep : model.n_e;
    for (int n : schedule->n_a_per_layer) {
      if (n < 1 || n > limit) {
        throw ValidationError(fmt::format("serving: schedule entry {} outside [1, {}]", n, limit));
      }
    }
  }
  if (mask) {
    if (mask->n_e != model.n_e) throw ValidationError("serving: mask expert count differs from model");
    if (mask->n_layers() != model.n_moe_layers()) {
      throw ValidationError(fmt::format("serving: mask has {} layers, model has {} MoE layers",
                                        mask->n_layers(), model.n_moe_layers()));
    }
    const int max_n_a = schedule ? *std::max_element(schedule->n_a_per_layer.begin(),
                                                     schedule->n_a_per_layer.end())
                                 : model.n_a;
    mask->validate(max_n_a);
  }
}

double ThroughputReport::bound_fraction_compute() const {
  const auto total = decode_layers_compute + decode_layers_memory;
  return total == 0 ? 0.0 : static_cast<double>(decode_layers_compute) / static_cast<double>(total);
}

ThroughputReport simulate_throughput(const ModelConfig& model, const HardwareProfile& hw,
                                     const ServingConfig& sc) {
  sc.validate(model);
  hw.validate();
  HardwareProfile effective = hw;
  effective.peak_flops = hw.peak_flops * sc.compute_efficiency;

  const auto plan = plan_layers(model, sc);
  const std::int64_t C = sc.concurrency;

  ThroughputReport r;
  r.n_e_eff = sc.mask ? sc.mask->keep : model.n_e;
  r.avg_n_a = sc.schedule ? average_active(*sc.schedule) : static_cast<double>(model.n_a);

  const auto prefill = step_cost(model, effective, plan, C * sc.input_tokens,
                                 sc.attention_coeff * static_cast<double>(C * sc.input_tokens), sc, 0);
  r.prefill_time_s = prefill.time_s;
  r.prefill_layers_compute = prefill.compute_layers;
  r.prefill_layers_memory = prefill.memory_layers;

  for (int k = 0; k < sc.output_tokens; ++k) {
    const double context = static_cast<double>(sc.input_tokens + k);
    const auto step = step_cost(model, effective, plan, C, sc.attention_coeff * context * C, sc,
                                static_cast<std::uint64_t>(k) + 1);
    r.decode_time_s += step.time_s;
    r.decode_layers_compute += step.compute_layers;
    r.decode_layers_memory += step.memory_layers;
    r.decode_expert_flops += step.expert_flops;
  }
  r.total_time_s = r.prefill_time_s + r.decode_time_s;
  r.total_tokens = C * (sc.input_tokens + sc.output_tokens);
  r.tokens_per_second = static_cast<double>(r.total_tokens) / r.total_time_s;
  return r;
}

std::vector<ThroughputReport> simulate_many(const ModelConfig& model, const HardwareProfile& hw,
                                            const std::vector<ServingConfig>& scenarios,
                                            int workers) {
  std::vector<ThroughputReport> out(scenarios.size());
  for (const auto& sc : scenarios) sc.validate(model);
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(scenarios.size())));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      out[i] = simulate_throughput(model, hw, scenarios[i]);
    }
  };
  if (n == 1) {
    work();
    return out;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < n; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return out;
}

std::vector<SpeedupRow> speedup_curve(const ModelConfig& model, const HardwareProfile& hw,
                                      const ServingConfig& base,
                                      const std::vector<ServingVariant>& variants,
                                      const std::vector<int>& concurrencies, int workers) {
  std::vector<ServingConfig> scenarios;
  for (int C : concurrencies) {
    ServingConfig b = base;
    b.concurrency = C;
    scenarios.push_back(b);
    for (const auto& v : variants) {
      ServingConfig s = b;
      s.schedule = v.schedule;
      s.mask = v.mask;
      scenarios.push_back(std::move(s));
    }
  }
  const auto reports = simulate_many(model, hw, scenarios, workers);
  std::vector<SpeedupRow> rows;
  const std::size_t stride = variants.size() + 1;
  for (std::size_t c = 0; c < concurrencies.size(); ++c) {
    const auto& base_report = reports[c * stride];
    rows.push_back({concurrencies[c], "base", base_report.tokens_per_second, 1.0, base_report});
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto& rep = reports[c * stride + v + 1];
      rows.push_back({concurrencies[c], variants[v].name, rep.tokens_per_second,
                      rep.tokens_per_second / base_report.tokens_per_second, rep});
    }
  }
  return rows;
}

std::optional<int> knee_concurrency(const ModelConfig& model, const HardwareProfile& hw,
                                    const ServingConfig& sc_template, int max_concurrency) {
  auto compute_majority = [&](int C) {
    ServingConfig sc = sc_template;
    sc.concurrency = C;
    return simulate_throughput(model, hw, sc).bound_fraction_compute() > 0.5;
  };
  // Doubling bracket, then bisection inside (lo, hi].
  int hi = 1;
  while (!compute_majority(hi)) {
    if (hi >= max_concurrency) return std::nullopt;
    hi = std::min(max_concurrency, hi * 2);
  }
  int lo = hi / 2;
  if (hi == 1) return 1;
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    if (compute_majority(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

std::string report_csv_header() {
  return "concurrency,input_tokens,output_tokens,avg_n_a,n_e_eff,tokens_per_second,"
         "speedup_vs_base,bound_fraction_compute\n";
}

std::string report_csv_row(const ServingConfig& sc, const ThroughputReport& r,
                           double speedup_vs_base) {
  return fmt::format("{},{},{},{:.4f},{},{:.3f},{:.6f},{:.6f}\n", sc.concurrency, sc.input_tokens,
                     sc.output_tokens, r.avg_n_a, r.n_e_eff, r.tokens_per_second, speedup_vs_base,
                     r.bound_fraction_compute());
}

}  // namespace moeperf
