#include "moeperf/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "moeperf/pruning.hpp"
#include "moeperf/rng.hpp"
#include "moeperf/routing.hpp"
#include "moeperf/toy_moe.hpp"

namespace moeperf {
namespace {

using Check = std::function<std::optional<std::string>()>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double denom = std::max(want.norm(), 1e-30);
  return (got - want).norm() / denom;
}

// ---- reference GLU: plain loops in double precision ----

Eigen::MatrixXd naive_glu(const GLUWeights& w, const Eigen::MatrixXf& h) {
  const auto d = w.d();
  const auto d_i = w.d_i();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, h.cols());
  for (Eigen::Index t = 0; t < h.cols(); ++t) {
    std::vector<double> mid(static_cast<std::size_t>(d_i));
    for (Eigen::Index i = 0; i < d_i; ++i) {
      double u = 0.0;
      double g = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        u += static_cast<double>(w.up(i, k)) * h(k, t);
        g += static_cast<double>(w.gate(i, k)) * h(k, t);
      }
      if (w.activation == Activation::silu) u = u / (1.0 + std::exp(-u));
      mid[static_cast<std::size_t>(i)] = u * g;
    }
    for (Eigen::Index r = 0; r < d; ++r) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < d_i; ++i) acc += static_cast<double>(w.down(r, i)) * mid[static_cast<std::size_t>(i)];
      out(r, t) = acc;
    }
  }
  return out;
}

// ---- reference router: repeated argmax, first maximum wins ----

struct RefDecision {
  std::vector<int> selected;
  std::vector<double> weights;
};

int first_argmax(const std::vector<double>& v, const std::vector<bool>& allowed) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(v.size()); ++i) {
    if (!allowed[i]) continue;
    if (best < 0 || v[i] > v[best]) best = i;
  }
  return best;
}

RefDecision reference_route(const std::vector<double>& logits, const RouterConfig& cfg,
                            const std::vector<bool>& eligible_in) {
  std::vector<bool> eligible = eligible_in;
  if (cfg.group) {
    const int n_group = cfg.group->n_group;
    const int size = cfg.n_e / n_group;
    std::vector<double> score(n_group, kNegInf);
    for (int g = 0; g < n_group; ++g) {
      std::vector<double> members;
      for (int e = g * size; e < (g + 1) * size; ++e) {
        if (eligible[e]) members.push_back(logits[e]);
      }
      std::sort(members.rbegin(), members.rend());
      if (members.empty()) continue;
      if (cfg.group_score == GroupScore::max || members.size() == 1) {
        score[g] = members[0];
      } else {
        score[g] = members[0] + members[1];
      }
    }
    std::vector<bool> open(n_group, true);
    std::vector<bool> keep(n_group, false);
    for (int k = 0; k < cfg.group->topk_group; ++k) {
      const int g = first_argmax(score, open);
      if (g < 0 || score[g] == kNegInf) break;
      keep[g] = true;
      open[g] = false;
    }
    for (int e = 0; e < cfg.n_e; ++e) eligible[e] = eligible[e] && keep[e / size];
  }
  RefDecision out;
  std::vector<bool> open = eligible;
  for (int k = 0; k < cfg.n_a; ++k) {
    const int e = first_argmax(logits, open);
    if (e < 0) throw std::runtime_error("reference: not enough experts");
    out.selected.push_back(e);
    open[e] = false;
  }
  if (cfg.kind == RouterKind::sigmoid) {
    double sum = 0.0;
    for (int e : out.selected) {
      out.weights.push_back(1.0 / (1.0 + std::exp(-logits[e])));
      sum += out.weights.back();
    }
    if (cfg.normalize_selected) {
      for (auto& w : out.weights) w /= sum;
    }
    return out;
  }
  double denom = 0.0;
  for (int e = 0; e < cfg.n_e; ++e) {
    const bool in_set = cfg.normalize_selected
                            ? std::find(out.selected.begin(), out.selected.end(), e) != out.selected.end()
                            : static_cast<bool>(eligible_in[e]);
    if (in_set) denom += std::exp(logits[e]);
  }
  for (int e : out.selected) out.weights.push_back(std::exp(logits[e]) / denom);
  return out;
}

std::optional<std::string> compare_decision(const RoutingDecision& got, const RefDecision& want) {
  if (got.selected != want.selected) {
    return fmt::format("selection [{}] vs reference [{}]", fmt::join(got.selected, ","),
                       fmt::join(want.selected, ","));
  }
  for (std::size_t i = 0; i < want.weights.size(); ++i) {
    if (std::abs(got.weights[i] - want.weights[i]) > 1e-6) {
      return fmt::format("weight {} differs: {} vs {}", i, got.weights[i], want.weights[i]);
    }
  }
  return std::nullopt;
}

// Logits in [-3, 3]; every fourth draw is quantized to halves to force ties.
std::vector<double> random_logits(CounterStream& rng, int n, bool quantize) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = 6.0 * rng.uniform() - 3.0;
    if (quantize) x = std::round(x * 2.0) / 2.0;
  }
  return v;
}

std::vector<RouterConfig> router_variants() {
  std::vector<RouterConfig> out;
  for (auto kind : {RouterKind::softmax, RouterKind::sigmoid}) {
    for (bool normalize : {true, false}) {
      for (bool grouped : {false, true}) {
        RouterConfig cfg;
        cfg.kind = kind;
        cfg.normalize_selected = normalize;
        cfg.n_e = 32;
        cfg.n_a = 4;
        if (grouped) cfg.group = GroupConfig{8, 2};
        out.push_back(cfg);
      }
    }
  }
  return out;
}

Eigen::MatrixXf column_of(const Eigen::MatrixXf& h, Eigen::Index t) { return h.col(t); }

class Suite {
 public:
  explicit Suite(const VerifyOptions& opts) : opts_(opts) {}

  void add(std::string name, const Check& check) {
    PropertyResult r{std::move(name), false, {}};
    try {
      const auto failure = check();
      r.passed = !failure.has_value();
      if (failure) r.detail = *failure;
    } catch (const std::exception& e) {
      r.detail = fmt::format("exception: {}", e.what());
    }
    report_.results.push_back(std::move(r));
  }

  VerifyReport run();

 private:
  std::uint64_t seed(std::uint64_t salt) const { return mix64(opts_.seed ^ mix64(salt)); }

  VerifyOptions opts_;
  VerifyReport report_;
};

VerifyReport Suite::run() {
  add("glu_matches_naive_oracle", [&]() -> std::optional<std::string> {
    for (int i = 0; i < 20; ++i) {
      const auto w = random_glu(8, 16, seed(1), i % 2 ? Activation::identity : Activation::silu, 4 * i);
      const Eigen::MatrixXf h = random_matrix(8, 3, seed(2), i, 1.0f);
      const double err = rel_err(glu_forward(w, h).cast<double>(), naive_glu(w, h));
      if (err > 1e-6) return fmt::format("case {}: relative error {:.3e}", i, err);
    }
    return std::nullopt;
  });

  add("glu_identity_weights_square_input", [&]() -> std::optional<std::string> {
    GLUWeights w;
    w.up = w.gate = w.down = Eigen::MatrixXf::Identity(6, 6);
    w.activation = Activation::identity;
    const Eigen::MatrixXf h = random_matrix(6, 2, seed(3), 0, 1.0f);
    if (glu_forward(w, h) != h.cwiseProduct(h)) return "output differs from h*h";
    return std::nullopt;
  });

  add("glu_zero_input_zero_output", [&]() -> std::optional<std::string> {
    const auto w = random_glu(8, 16, seed(4));
    if (!glu_forward(w, Eigen::MatrixXf::Zero(8, 2)).isZero(0.0f)) return "non-zero output";
    return std::nullopt;
  });

  add("partition_equivalence", [&]() -> std::optional<std::string> {
    for (int i = 0; i < 100; ++i) {
      const auto w = random_glu(16, 64, seed(5), Activation::silu, 3 * static_cast<std::uint64_t>(i));
      const Eigen::MatrixXf h = random_matrix(16, 4, seed(6), i, 1.0f);
      Eigen::MatrixXf sum = Eigen::MatrixXf::Zero(16, 4);
      for (const auto& part : split_glu_into_experts(w, 8)) sum += glu_forward(part, h);
      const double err = rel_err(sum.cast<double>(), glu_forward(w, h).cast<double>());
      if (err > 1e-5) return fmt::format("case {}: relative error {:.3e}", i, err);
    }
    return std::nullopt;
  });

  add("partition_rank_one_experts", [&]() -> std::optional<std::string> {
    const auto w = random_glu(8, 16, seed(7));
    const Eigen::MatrixXf h = random_matrix(8, 3, seed(8), 0, 1.0f);
    Eigen::MatrixXf sum = Eigen::MatrixXf::Zero(8, 3);
    for (const auto& part : split_glu_into_experts(w, 16)) sum += glu_forward(part, h);
    const double err = rel_err(sum.cast<double>(), glu_forward(w, h).cast<double>());
    if (err > 1e-5) return fmt::format("relative error {:.3e}", err);
    return std::nullopt;
  });

  add("partition_moe_all_parts_selected", [&]() -> std::optional<std::string> {
    const auto w = random_glu(8, 32, seed(9));
    ToyMoELayer layer;
    layer.experts = split_glu_into_experts(w, 4);
    layer.router = random_matrix(4, 8, seed(10), 0, 1.0f);
    layer.router_cfg.n_e = 4;
    layer.router_cfg.n_a = 4;
    MoeForwardOptions opt;
    opt.weight_override = std::vector<double>(4, 1.0);
    const Eigen::MatrixXf h = random_matrix(8, 5, seed(11), 0, 1.0f);
    const double err = rel_err(moe_forward(layer, h, opt).cast<double>(), glu_forward(w, h).cast<double>());
    if (err > 1e-5) return fmt::format("relative error {:.3e}", err);
    return std::nullopt;
  });

  // A freshly generated layer, or the one from the supplied dump.
  std::optional<ToyMoELayer> subject;
  RouterConfig base_cfg;
  base_cfg.n_e = 16;
  base_cfg.n_a = 6;
  const ToyLayerShape shape{8, 4, 12, Activation::silu};
  if (opts_.weight_dump) {
    add("weight_dump_integrity", [&]() -> std::optional<std::string> {
      subject = load_layer(*opts_.weight_dump);
      return std::nullopt;
    });
  } else {
    subject = random_layer(shape, base_cfg, seed(12));
    add("weight_dump_roundtrip", [&]() -> std::optional<std::string> {
      const auto reloaded = load_layer(dump_layer(*subject));
      const Eigen::MatrixXf h = random_matrix(8, 4, seed(13), 0, 1.0f);
      if (moe_forward(reloaded, h) != moe_forward(*subject, h)) return "reloaded layer output differs";
      return std::nullopt;
    });
  }
  auto need_subject = [&]() -> const ToyMoELayer& {
    if (!subject) throw std::runtime_error("no usable layer (weight dump failed to load)");
    return *subject;
  };

  add("moe_output_matches_decisions", [&]() -> std::optional<std::string> {
    const auto& layer = need_subject();
    const Eigen::MatrixXf h = random_matrix(layer.d(), 6, seed(14), 0, 1.0f);
    const auto traced = moe_forward_traced(layer, h);
    for (Eigen::Index t = 0; t < h.cols(); ++t) {
      const Eigen::MatrixXf tok = column_of(h, t);
      Eigen::MatrixXd want = layer.shared ? naive_glu(*layer.shared, tok) : Eigen::MatrixXd::Zero(layer.d(), 1);
      const auto& dec = traced.decisions[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < dec.selected.size(); ++i) {
        want += dec.weights[i] * naive_glu(layer.experts[dec.selected[i]], tok);
      }
      const double err = rel_err(traced.output.col(t).cast<double>(), want);
      if (err > 1e-5) return fmt::format("token {}: relative error {:.3e}", t, err);
    }
    return std::nullopt;
  });

  add("moe_single_expert_reduces_to_glu", [&]() -> std::optional<std::string> {
    ToyMoELayer layer;
    layer.experts = {random_glu(8, 16, seed(15))};
    layer.router = random_matrix(1, 8, seed(16), 0, 1.0f);
    layer.router_cfg.n_e = 1;
    layer.router_cfg.n_a = 1;
    MoeForwardOptions opt;
    opt.weight_override = std::vector<double>{1.0};
    const Eigen::MatrixXf h = random_matrix(8, 3, seed(17), 0, 1.0f);
    if (moe_forward(layer, h, opt) != glu_forward(layer.experts[0], h)) return "output differs";
    return std::nullopt;
  });

  add("skipping_keeps_topk_prefix", [&]() -> std::optional<std::string> {
    const auto& layer = need_subject();
    const Eigen::MatrixXf h = random_matrix(layer.d(), 8, seed(18), 0, 1.0f);
    const int full = layer.router_cfg.n_a;
    MoeForwardOptions small;
    small.n_a_override = std::min(2, full);
    const auto a = moe_forward_traced(layer, h);
    const auto b = moe_forward_traced(layer, h, small);
    for (std::size_t t = 0; t < a.decisions.size(); ++t) {
      const auto& sa = a.decisions[t].selected;
      const auto& sb = b.decisions[t].selected;
      if (!std::equal(sb.begin(), sb.end(), sa.begin())) {
        return fmt::format("token {}: n_a={} picks are not a prefix of the n_a={} picks", t, sb.size(), full);
      }
    }
    return std::nullopt;
  });

  add("mask_reroutes_to_next_retained", [&]() -> std::optional<std::string> {
    const auto& layer = need_subject();
    const Eigen::MatrixXf h = random_matrix(layer.d(), 8, seed(19), 0, 1.0f);
    const auto unmasked = moe_forward_traced(layer, h);
    for (Eigen::Index t = 0; t < h.cols(); ++t) {
      const int top = unmasked.decisions[static_cast<std::size_t>(t)].selected.front();
      std::vector<int> retained;
      for (int e = 0; e < layer.router_cfg.n_e; ++e) {
        if (e != top) retained.push_back(e);
      }
      MoeForwardOptions opt;
      opt.mask = retained;
      const auto masked = moe_forward_traced(layer, column_of(h, t), opt);
      std::vector<bool> eligible(layer.router_cfg.n_e, true);
      eligible[top] = false;
      const auto& logits = masked.decisions.front().logits;
      const auto ref = reference_route(logits, layer.router_cfg, eligible);
      if (auto diff = compare_decision(masked.decisions.front(), ref)) return fmt::format("token {}: {}", t, *diff);
      Eigen::MatrixXd want = layer.shared ? naive_glu(*layer.shared, column_of(h, t))
                                          : Eigen::MatrixXd::Zero(layer.d(), 1);
      for (std::size_t i = 0; i < ref.selected.size(); ++i) {
        want += ref.weights[i] * naive_glu(layer.experts[ref.selected[i]], column_of(h, t));
      }
      const double err = rel_err(masked.output.cast<double>(), want);
      if (err > 1e-5) return fmt::format("token {}: masked output relative error {:.3e}", t, err);
    }
    return std::nullopt;
  });

  add("forward_is_deterministic", [&]() -> std::optional<std::string> {
    const auto& layer = need_subject();
    const Eigen::MatrixXf h = random_matrix(layer.d(), 5, seed(20), 0, 1.0f);
    if (moe_forward(layer, h) != moe_forward(layer, h)) return "repeated forward differs";
    return std::nullopt;
  });

  add("route_matches_reference", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(21), 0);
    const auto variants = router_variants();
    for (int i = 0; i < 1000; ++i) {
      const auto& cfg = variants[static_cast<std::size_t>(i) % variants.size()];
      const auto logits = random_logits(rng, cfg.n_e, i % 4 == 3);
      const auto ref = reference_route(logits, cfg, std::vector<bool>(cfg.n_e, true));
      if (auto diff = compare_decision(route(logits, cfg), ref)) return fmt::format("case {}: {}", i, *diff);
    }
    return std::nullopt;
  });

  add("route_restricted_matches_reference", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(22), 0);
    const auto variants = router_variants();
    for (int i = 0; i < 1000; ++i) {
      auto cfg = variants[static_cast<std::size_t>(i) % variants.size()];
      cfg.group.reset();  // a sparse mask can empty whole groups
      const auto logits = random_logits(rng, cfg.n_e, i % 4 == 3);
      std::vector<int> retained;
      std::vector<bool> eligible(cfg.n_e, false);
      for (int e = 0; e < cfg.n_e; ++e) {
        if (rng.uniform() < 0.5) {
          retained.push_back(e);
          eligible[e] = true;
        }
      }
      for (int e = 0; static_cast<int>(retained.size()) < cfg.n_a; ++e) {
        if (!eligible[e]) {
          eligible[e] = true;
          retained.insert(std::upper_bound(retained.begin(), retained.end(), e), e);
        }
      }
      const auto ref = reference_route(logits, cfg, eligible);
      if (auto diff = compare_decision(route_restricted(logits, cfg, retained), ref)) {
        return fmt::format("case {}: {}", i, *diff);
      }
    }
    return std::nullopt;
  });

  add("group_limit_touches_at_most_topk_groups", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(23), 0);
    RouterConfig cfg;
    cfg.kind = RouterKind::sigmoid;
    cfg.n_e = 256;
    cfg.n_a = 8;
    cfg.group = GroupConfig{8, 2};
    for (int i = 0; i < 200; ++i) {
      const auto dec = route(random_logits(rng, cfg.n_e, false), cfg);
      std::vector<int> groups;
      for (int e : dec.selected) groups.push_back(e / 32);
      std::sort(groups.begin(), groups.end());
      groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
      if (groups.size() > 2) return fmt::format("case {}: {} groups touched", i, groups.size());
    }
    return std::nullopt;
  });

  add("route_permutation_equivariant", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(24), 0);
    RouterConfig cfg;
    cfg.n_e = 24;
    cfg.n_a = 5;
    for (int i = 0; i < 200; ++i) {
      const auto logits = random_logits(rng, cfg.n_e, false);
      std::vector<int> perm(cfg.n_e);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> permuted(cfg.n_e);
      for (int e = 0; e < cfg.n_e; ++e) permuted[perm[e]] = logits[e];
      const auto a = route(logits, cfg);
      const auto b = route(permuted, cfg);
      for (int k = 0; k < cfg.n_a; ++k) {
        if (perm[a.selected[k]] != b.selected[k]) return fmt::format("case {}: rank {} differs", i, k);
      }
    }
    return std::nullopt;
  });

  add("softmax_scale_keeps_selection_and_shift_keeps_weights", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(25), 0);
    RouterConfig cfg;
    cfg.n_e = 16;
    cfg.n_a = 4;
    for (int i = 0; i < 200; ++i) {
      const auto logits = random_logits(rng, cfg.n_e, false);
      const double c = 0.1 + 5.0 * rng.uniform();
      const double s = 10.0 * rng.uniform() - 5.0;
      std::vector<double> scaled(logits);
      std::vector<double> shifted(logits);
      for (auto& v : scaled) v *= c;
      for (auto& v : shifted) v += s;
      const auto a = route(logits, cfg);
      const auto b = route(scaled, cfg);
      const auto sh = route(shifted, cfg);
      if (a.selected != b.selected) return fmt::format("case {}: scaling by {} changed the selection", i, c);
      if (a.selected != sh.selected) return fmt::format("case {}: shift changed the selection", i);
      for (int k = 0; k < cfg.n_a; ++k) {
        if (std::abs(a.weights[k] - sh.weights[k]) > 1e-12) return fmt::format("case {}: shift changed weights", i);
      }
    }
    return std::nullopt;
  });

  add("distinct_experts_closed_form_vs_monte_carlo", [&]() -> std::optional<std::string> {
    for (std::int64_t T : {1, 8, 32}) {
      const auto mc = sample_distinct_experts(64, 6, T, 20000, seed(26) + static_cast<std::uint64_t>(T));
      const double exact = expected_distinct_experts(64, 6, T);
      const double tol = std::max(3.0 * mc.std_error, 1e-12);
      if (std::abs(mc.mean - exact) > tol) {
        return fmt::format("T={}: Monte Carlo {:.4f} vs closed form {:.4f} (3 sigma = {:.4f})", T, mc.mean, exact, tol);
      }
    }
    return std::nullopt;
  });

  add("batch_routing_independent_of_workers", [&]() -> std::optional<std::string> {
    RouterConfig cfg;
    cfg.n_e = 64;
    cfg.n_a = 6;
    const auto one = simulate_batch_routing(cfg, 257, std::nullopt, seed(27), 1);
    const auto three = simulate_batch_routing(cfg, 257, std::nullopt, seed(27), 3);
    if (one.distinct_count != three.distinct_count || !(one.stats == three.stats)) {
      return "results differ between 1 and 3 workers";
    }
    one.stats.check_invariants(cfg.n_a);
    return std::nullopt;
  });

  add("stats_conserve_counts_and_mass", [&]() -> std::optional<std::string> {
    CounterStream rng(seed(28), 0);
    RouterConfig cfg;
    cfg.n_e = 16;
    cfg.n_a = 3;
    std::vector<StatsRecord> stream;
    for (int i = 0; i < 300; ++i) {
      const auto logits = random_logits(rng, cfg.n_e, false);
      stream.push_back({i % 3, route(logits, cfg), pre_topk_probabilities(logits, cfg.kind)});
    }
    const auto stats = accumulate_stats(stream, cfg.n_e);
    stats.check_invariants(cfg.n_a);
    for (const auto& [index, layer] : stats.layers()) {
      const double mass = std::accumulate(layer.soft.begin(), layer.soft.end(), 0.0);
      if (std::abs(mass - static_cast<double>(layer.tokens_seen)) > 1e-9 * static_cast<double>(layer.tokens_seen)) {
        return fmt::format("layer {}: soft mass {} for {} tokens", index, mass, layer.tokens_seen);
      }
    }
    return std::nullopt;
  });

  return report_;
}

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

std::string VerifyReport::summary() const {
  std::string out;
  for (const auto& r : results) {
    out += r.passed ? fmt::format("PASS {}\n", r.name) : fmt::format("FAIL {}: {}\n", r.name, r.detail);
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  out += fmt::format("{}/{} properties passed\n", passed, results.size());
  return out;
}

VerifyReport run_property_suite(const VerifyOptions& options) { return Suite(options).run(); }

}  // namespace moeperf
