#include "moeperf/routing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moeperf/error.hpp"
#include "moeperf/rng.hpp"

namespace moeperf {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Lower index wins on equal logits.
bool ranks_before(std::span<const double> logits, int a, int b) {
  if (logits[a] != logits[b]) return logits[a] > logits[b];
  return a < b;
}

void apply_group_limit(std::span<const double> logits, const RouterConfig& cfg,
                       std::vector<bool>& eligible) {
  const int n_group = cfg.group->n_group;
  const int group_size = cfg.n_e / n_group;
  std::vector<double> score(n_group, kNegInf);
  for (int g = 0; g < n_group; ++g) {
    double first = kNegInf;
    double second = kNegInf;
    for (int e = g * group_size; e < (g + 1) * group_size; ++e) {
      if (!eligible[e]) continue;
      if (logits[e] > first) {
        second = first;
        first = logits[e];
      } else if (logits[e] > second) {
        second = logits[e];
      }
    }
    if (first == kNegInf) continue;
    if (cfg.group_score == GroupScore::max || second == kNegInf) {
      score[g] = first;
    } else {
      score[g] = first + second;
    }
  }
  std::vector<int> order(n_group);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  std::vector<bool> keep_group(n_group, false);
  for (int i = 0; i < cfg.group->topk_group; ++i) {
    if (score[order[i]] != kNegInf) keep_group[order[i]] = true;
  }
  for (int e = 0; e < cfg.n_e; ++e) {
    if (!keep_group[e / group_size]) eligible[e] = false;
  }
}

}  // namespace

void RouterConfig::validate() const {
  if (n_e < 1) throw ValidationError("router: n_e must be at least 1");
  if (n_a < 1 || n_a > n_e) {
    throw ValidationError(fmt::format("router: n_a={} outside [1, {}]", n_a, n_e));
  }
  if (group) {
    if (group->n_group < 1 || n_e % group->n_group != 0) {
      throw ValidationError("router: n_group must divide n_e");
    }
    if (group->topk_group < 1 || group->topk_group > group->n_group) {
      throw ValidationError("router: topk_group outside [1, n_group]");
    }
  }
}

RouterConfig RouterConfig::from_model(const ModelConfig& model, std::optional<int> n_a_override) {
  RouterConfig cfg;
  cfg.kind = model.router_kind;
  cfg.normalize_selected = model.normalize_selected;
  cfg.group = model.group;
  cfg.n_e = model.n_e;
  cfg.n_a = n_a_override.value_or(model.n_a);
  cfg.validate();
  return cfg;
}

std::vector<double> pre_topk_probabilities(std::span<const double> logits, RouterKind kind) {
  std::vector<double> p(logits.size());
  if (kind == RouterKind::sigmoid) {
    std::transform(logits.begin(), logits.end(), p.begin(), logistic);
    return p;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

RoutingDecision route_among(std::span<const double> logits, const RouterConfig& cfg,
                            const std::vector<bool>& eligible_in) {
  cfg.validate();
  if (static_cast<int>(logits.size()) != cfg.n_e) {
    throw ValidationError(
        fmt::format("route: got {} logits for {} experts", logits.size(), cfg.n_e));
  }
  if (static_cast<int>(eligible_in.size()) != cfg.n_e) {
    throw ValidationError("route: eligibility mask size differs from n_e");
  }
  for (double v : logits) {
    if (std::isnan(v)) throw ValidationError("route: NaN logit");
    if (!std::isfinite(v)) throw ValidationError("route: non-finite logit");
  }

  std::vector<bool> eligible = eligible_in;
  if (cfg.group) apply_group_limit(logits, cfg, eligible);

  std::vector<int> candidates;
  for (int e = 0; e < cfg.n_e; ++e) {
    if (eligible[e]) candidates.push_back(e);
  }
  if (static_cast<int>(candidates.size()) < cfg.n_a) {
    throw ValidationError(fmt::format("route: n_a={} exceeds the {} experts left after masking",
                                      cfg.n_a, candidates.size()));
  }
  std::partial_sort(candidates.begin(), candidates.begin() + cfg.n_a, candidates.end(),
                    [&](int a, int b) { return ranks_before(logits, a, b); });
  candidates.resize(cfg.n_a);

  RoutingDecision out;
  out.selected = std::move(candidates);
  out.logits.assign(logits.begin(), logits.end());
  out.weights.resize(cfg.n_a);

  if (cfg.kind == RouterKind::sigmoid) {
    double sum = 0.0;
    for (int i = 0; i < cfg.n_a; ++i) {
      out.weights[i] = logistic(logits[out.selected[i]]);
      sum += out.weights[i];
    }
    if (cfg.normalize_selected) {
      for (auto& w : out.weights) w /= sum;
    }
    return out;
  }

  // Softmax. The normalizing set is either the selection or every expert that
  // survived the eligibility mask (group limiting does not shrink it).
  const double top = logits[out.selected.front()];
  double denom = 0.0;
  if (cfg.normalize_selected) {
    for (int e : out.selected) denom += std::exp(logits[e] - top);
  } else {
    double all_top = kNegInf;
    for (int e = 0; e < cfg.n_e; ++e) {
      if (eligible_in[e]) all_top = std::max(all_top, logits[e]);
    }
    for (int e = 0; e < cfg.n_e; ++e) {
      if (eligible_in[e]) denom += std::exp(logits[e] - all_top);
    }
    denom *= std::exp(all_top - top);
  }
  for (int i = 0; i < cfg.n_a; ++i) {
    out.weights[i] = std::exp(logits[out.selected[i]] - top) / denom;
  }
  return out;
}

RoutingDecision route(std::span<const double> logits, const RouterConfig& cfg) {
  return route_among(logits, cfg, std::vector<bool>(cfg.n_e > 0 ? cfg.n_e : 0, true));
}

double expected_distinct_experts(int n_e, int n_a, std::int64_t tokens) {
  if (n_e < 1 || n_a < 1 || n_a > n_e) {
    throw ValidationError(fmt::format("distinct experts: need 1 <= n_a={} <= n_e={}", n_a, n_e));
  }
  if (tokens < 0) throw ValidationError("distinct experts: token count must be non-negative");
  if (tokens == 0) return 0.0;
  if (tokens == 1) return static_cast<double>(n_a);
  const double miss = 1.0 - static_cast<double>(n_a) / n_e;
  return n_e * (1.0 - std::pow(miss, static_cast<double>(tokens)));
}

double expected_distinct_experts(std::span<const double> popularity, int n_a,
                                 std::int64_t tokens) {
  if (popularity.empty()) throw ValidationError("distinct experts: empty popularity");
  if (n_a < 1 || n_a > static_cast<int>(popularity.size())) {
    throw ValidationError("distinct experts: n_a outside [1, n_e]");
  }
  if (tokens < 0) throw ValidationError("distinct experts: token count must be non-negative");
  double total = 0.0;
  for (double p : popularity) {
    const double inclusion = std::min(1.0, n_a * p);
    total += 1.0 - std::pow(1.0 - inclusion, static_cast<double>(tokens));
  }
  return total;
}

const LayerStats& RoutingStats::layer(int index) const {
  auto it = layers_.find(index);
  if (it == layers_.end()) throw ValidationError(fmt::format("stats: no layer {}", index));
  return it->second;
}

LayerStats& RoutingStats::mutable_layer(int index) {
  if (index < 0) throw ValidationError("stats: negative layer index");
  auto [it, inserted] = layers_.try_emplace(index);
  if (inserted) {
    it->second.hard.assign(n_e_, 0);
    it->second.soft.assign(n_e_, 0.0);
  }
  return it->second;
}

void RoutingStats::accumulate(int layer, const RoutingDecision& decision,
                              std::span<const double> probabilities, SoftCountMode mode) {
  if (static_cast<int>(probabilities.size()) != n_e_) {
    throw ValidationError(fmt::format("stats: {} probabilities for {} experts",
                                      probabilities.size(), n_e_));
  }
  LayerStats& s = mutable_layer(layer);
  for (int e : decision.selected) {
    if (e < 0 || e >= n_e_) throw ValidationError("stats: selected expert out of range");
    ++s.hard[e];
  }
  if (mode == SoftCountMode::all_experts) {
    for (int e = 0; e < n_e_; ++e) s.soft[e] += probabilities[e];
  } else {
    for (int e : decision.selected) s.soft[e] += probabilities[e];
  }
  ++s.tokens_seen;
}

void RoutingStats::check_invariants(int n_a) const {
  for (const auto& [index, s] : layers_) {
    const auto total = std::accumulate(s.hard.begin(), s.hard.end(), std::int64_t{0});
    if (total != s.tokens_seen * n_a) {
      throw ValidationError(fmt::format(
          "stats layer {}: hard counts sum to {}, expected {}", index, total, s.tokens_seen * n_a));
    }
    for (double v : s.soft) {
      if (!(v >= 0.0)) throw ValidationError(fmt::format("stats layer {}: negative soft count", index));
    }
  }
}

std::string RoutingStats::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  // Keys are emitted in numeric order, so the text is canonical.
  for (const auto& [index, s] : layers_) {
    nlohmann::ordered_json entry;
    entry["hard"] = s.hard;
    entry["soft"] = s.soft;
    entry["tokens_seen"] = s.tokens_seen;
    doc[std::to_string(index)] = std::move(entry);
  }
  return doc.dump(1) + "\n";
}

RoutingStats RoutingStats::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("stats: malformed JSON ({})", e.what()));
  }
  if (!doc.is_object() || doc.empty()) throw ValidationError("stats: expected a non-empty object");
  RoutingStats stats;
  try {
    for (const auto& [key, entry] : doc.items()) {
      std::size_t used = 0;
      const int index = std::stoi(key, &used);
      if (used != key.size() || index < 0) throw ValidationError("stats: bad layer key '" + key + "'");
      LayerStats s;
      s.hard = entry.at("hard").get<std::vector<std::int64_t>>();
      s.soft = entry.at("soft").get<std::vector<double>>();
      s.tokens_seen = entry.at("tokens_seen").get<std::int64_t>();
      if (s.hard.size() != s.soft.size()) throw ValidationError("stats: hard/soft length mismatch");
      if (stats.n_e_ == 0) stats.n_e_ = static_cast<int>(s.hard.size());
      if (static_cast<int>(s.hard.size()) != stats.n_e_) {
        throw ValidationError("stats: layers disagree on expert count");
      }
      stats.layers_.emplace(index, std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("stats: {}", e.what()));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ValidationError*>(&e) != nullptr) throw;
    throw ValidationError(fmt::format("stats: {}", e.what()));
  }
  return stats;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string RoutingStats::digest() const { return fnv1a_hex(to_json()); }

RoutingStats accumulate_stats(std::span<const StatsRecord> stream, int n_e, SoftCountMode mode) {
  RoutingStats stats(n_e);
  for (const auto& rec : stream) stats.accumulate(rec.layer, rec.decision, rec.probabilities, mode);
  return stats;
}

namespace {

// Draws n_a distinct experts for one token into `chosen`.
void draw_uniform(CounterStream& rng, int n_e, int n_a, std::vector<int>& chosen) {
  chosen.clear();
  while (static_cast<int>(chosen.size()) < n_a) {
    const int e = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_e)));
    if (std::find(chosen.begin(), chosen.end(), e) == chosen.end()) chosen.push_back(e);
  }
}

// Successive sampling without replacement via Gumbel top-k keys.
void draw_weighted(CounterStream& rng, std::span<const double> log_p, int n_a,
                   std::vector<int>& chosen, std::vector<double>& keys) {
  const int n_e = static_cast<int>(log_p.size());
  keys.resize(n_e);
  for (int e = 0; e < n_e; ++e) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keys[e] = log_p[e] - std::log(-std::log(u));
  }
  chosen.resize(n_e);
  std::iota(chosen.begin(), chosen.end(), 0);
  std::partial_sort(chosen.begin(), chosen.begin() + n_a, chosen.end(),
                    [&](int a, int b) { return keys[a] > keys[b] || (keys[a] == keys[b] && a < b); });
  chosen.resize(n_a);
}

template <typename Fn>
void parallel_chunks(std::int64_t count, int workers, Fn&& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::int64_t>(count, 1))));
  if (workers == 1) {
    fn(0, std::int64_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  const std::int64_t chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min(count, begin + chunk);
    pool.emplace_back([&, w, begin, end] { fn(w, begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

BatchRoutingResult simulate_batch_routing(const RouterConfig& cfg, std::int64_t tokens,
                                          std::optional<std::span<const double>> popularity,
                                          std::uint64_t seed, int workers) {
  cfg.validate();
  if (tokens < 0) throw ValidationError("simulate: token count must be non-negative");
  std::vector<double> log_p;
  std::vector<double> soft_per_token(cfg.n_e, 1.0 / cfg.n_e);
  if (popularity) {
    if (static_cast<int>(popularity->size()) != cfg.n_e) {
      throw ValidationError("simulate: popularity length differs from n_e");
    }
    double sum = 0.0;
    int positive = 0;
    for (double p : *popularity) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("simulate: invalid popularity entry");
      sum += p;
      positive += p > 0.0;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("simulate: popularity must sum to 1");
    if (positive < cfg.n_a) {
      throw ValidationError("simulate: fewer experts with positive popularity than n_a");
    }
    log_p.resize(cfg.n_e);
    for (int e = 0; e < cfg.n_e; ++e) {
      log_p[e] = (*popularity)[e] > 0.0 ? std::log((*popularity)[e]) : kNegInf;
    }
    soft_per_token.assign(popularity->begin(), popularity->end());
  }

  // Each worker owns a private tally; merging in worker order keeps the sums
  // independent of the partition because every entry is an integer count.
  const int n_workers = std::max(1, workers);
  std::vector<std::vector<std::int64_t>> partial(n_workers, std::vector<std::int64_t>(cfg.n_e, 0));
  parallel_chunks(tokens, n_workers, [&](int w, std::int64_t begin, std::int64_t end) {
    std::vector<int> chosen;
    std::vector<double> keys;
    for (std::int64_t t = begin; t < end; ++t) {
      CounterStream rng(seed, static_cast<std::uint64_t>(t));
      if (popularity) {
        draw_weighted(rng, log_p, cfg.n_a, chosen, keys);
      } else {
        draw_uniform(rng, cfg.n_e, cfg.n_a, chosen);
      }
      for (int e : chosen) ++partial[w][e];
    }
  });

  BatchRoutingResult result;
  result.stats = RoutingStats(cfg.n_e);
  LayerStats& s = result.stats.mutable_layer(0);
  for (const auto& p : partial) {
    for (int e = 0; e < cfg.n_e; ++e) s.hard[e] += p[e];
  }
  s.tokens_seen = tokens;
  for (int e = 0; e < cfg.n_e; ++e) s.soft[e] = soft_per_token[e] * static_cast<double>(tokens);
  result.distinct_count =
      static_cast<int>(std::count_if(s.hard.begin(), s.hard.end(), [](auto c) { return c > 0; }));
  return result;
}

DistinctSample sample_distinct_experts(int n_e, int n_a, std::int64_t tokens, int trials,
                                       std::uint64_t seed, int workers) {
  if (n_e < 1 || n_a < 1 || n_a > n_e) throw ValidationError("sample: need 1 <= n_a <= n_e");
  if (trials < 1) throw ValidationError("sample: need at least one trial");
  DistinctSample out;
  out.counts.assign(trials, 0);
  parallel_chunks(trials, workers, [&](int, std::int64_t begin, std::int64_t end) {
    std::vector<int> chosen;
    std::vector<std::uint8_t> seen(n_e);
    for (std::int64_t i = begin; i < end; ++i) {
      std::fill(seen.begin(), seen.end(), 0);
      const std::uint64_t trial_seed = mix64(seed) ^ mix64(static_cast<std::uint64_t>(i) + 1);
      int distinct = 0;
      for (std::int64_t t = 0; t < tokens; ++t) {
        CounterStream rng(trial_seed, static_cast<std::uint64_t>(t));
        draw_uniform(rng, n_e, n_a, chosen);
        for (int e : chosen) {
          distinct += seen[e] == 0;
          seen[e] = 1;
        }
      }
      out.counts[i] = distinct;
    }
  });
  const double n = trials;
  double sum = 0.0;
  for (int c : out.counts) sum += c;
  out.mean = sum / n;
  double sq = 0.0;
  for (int c : out.counts) sq += (c - out.mean) * (c - out.mean);
  out.stddev = trials > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  out.std_error = out.stddev / std::sqrt(n);
  return out;
}

}  // namespace moeperf
