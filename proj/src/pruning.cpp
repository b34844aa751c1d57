#include "moeperf/pruning.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moeperf/error.hpp"
#include "moeperf/rng.hpp"

namespace moeperf {
namespace {

constexpr std::pair<PruneStrategy, std::string_view> kStrategyNames[] = {
    {PruneStrategy::random, "random"},
    {PruneStrategy::odd, "odd"},
    {PruneStrategy::even, "even"},
    {PruneStrategy::first_half, "first_half"},
    {PruneStrategy::last_half, "last_half"},
    {PruneStrategy::activate_count, "activate_count"},
    {PruneStrategy::soft_count, "soft_count"},
};

template <typename Score>
std::vector<int> top_by_score(int n_e, int keep, Score score) {
  std::vector<int> order(n_e);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score(a) > score(b); });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<int> strided(int start, int n_e, int keep, std::string_view name) {
  std::vector<int> out;
  for (int e = start; e < n_e && static_cast<int>(out.size()) < keep; e += 2) out.push_back(e);
  if (static_cast<int>(out.size()) < keep) {
    throw ValidationError(fmt::format("{}: only {} such indices among {} experts, keep={}", name,
                                      out.size(), n_e, keep));
  }
  return out;
}

}  // namespace

std::string_view to_string(PruneStrategy s) {
  for (const auto& [value, name] : kStrategyNames) {
    if (value == s) return name;
  }
  return "unknown";
}

PruneStrategy parse_prune_strategy(std::string_view text) {
  for (const auto& [value, name] : kStrategyNames) {
    if (name == text) return value;
  }
  throw ValidationError(fmt::format(
      "unknown strategy '{}' (random, odd, even, first_half, last_half, activate_count, soft_count)",
      text));
}

void PruneMask::validate(int n_a) const {
  if (keep < n_a) throw ValidationError(fmt::format("mask: keep={} is below n_a={}", keep, n_a));
  if (keep > n_e) throw ValidationError(fmt::format("mask: keep={} exceeds n_e={}", keep, n_e));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& ids = layers[l];
    if (static_cast<int>(ids.size()) != keep) {
      throw ValidationError(fmt::format("mask layer {}: {} experts, expected {}", l, ids.size(), keep));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= n_e) throw ValidationError(fmt::format("mask layer {}: index out of range", l));
      if (i > 0 && ids[i] <= ids[i - 1]) {
        throw ValidationError(fmt::format("mask layer {}: indices not sorted and distinct", l));
      }
    }
  }
}

std::string PruneMask::to_json() const {
  nlohmann::ordered_json doc;
  doc["strategy"] = to_string(strategy);
  doc["keep"] = keep;
  doc["n_e"] = n_e;
  doc["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
  doc["stats_digest"] = stats_digest ? nlohmann::ordered_json(*stats_digest) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json layer_doc = nlohmann::ordered_json::object();
  for (std::size_t l = 0; l < layers.size(); ++l) layer_doc[std::to_string(l)] = layers[l];
  doc["layers"] = std::move(layer_doc);
  return doc.dump(1) + "\n";
}

PruneMask PruneMask::from_json(std::string_view text) {
  PruneMask mask;
  try {
    const auto doc = nlohmann::json::parse(text);
    mask.strategy = parse_prune_strategy(doc.at("strategy").get<std::string>());
    mask.keep = doc.at("keep").get<int>();
    mask.n_e = doc.at("n_e").get<int>();
    if (!doc.at("seed").is_null()) mask.seed = doc.at("seed").get<std::uint64_t>();
    if (!doc.at("stats_digest").is_null()) mask.stats_digest = doc.at("stats_digest").get<std::string>();
    const auto& layers = doc.at("layers");
    mask.layers.resize(layers.size());
    for (const auto& [key, ids] : layers.items()) {
      const auto index = std::stoul(key);
      if (index >= mask.layers.size()) throw ValidationError("mask: layer keys must be 0..N-1");
      mask.layers[index] = ids.get<std::vector<int>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("mask: {}", e.what()));
  }
  mask.validate(1);
  return mask;
}

PruneMask build_mask(const MaskRequest& r) {
  if (r.n_e < 1 || r.n_layers < 1) throw ValidationError("mask: n_e and n_layers must be >= 1");
  if (r.keep > r.n_e) throw ValidationError(fmt::format("mask: keep={} exceeds n_e={}", r.keep, r.n_e));
  if (r.keep < r.n_a) throw ValidationError(fmt::format("mask: keep={} is below n_a={}", r.keep, r.n_a));

  PruneMask mask;
  mask.strategy = r.strategy;
  mask.keep = r.keep;
  mask.n_e = r.n_e;
  mask.layers.resize(r.n_layers);

  const bool by_count = r.strategy == PruneStrategy::activate_count || r.strategy == PruneStrategy::soft_count;
  if (by_count) {
    if (r.stats == nullptr) {
      throw ValidationError(fmt::format("{} needs routing stats", to_string(r.strategy)));
    }
    if (r.stats->n_e() != r.n_e) throw ValidationError("mask: stats expert count differs from n_e");
    mask.stats_digest = r.stats->digest();
  }
  if (r.strategy == PruneStrategy::random) {
    if (!r.seed) throw ValidationError("random strategy needs a seed");
    mask.seed = r.seed;
  }

  for (int l = 0; l < r.n_layers; ++l) {
    auto& ids = mask.layers[l];
    switch (r.strategy) {
      case PruneStrategy::odd: ids = strided(1, r.n_e, r.keep, "odd"); break;
      case PruneStrategy::even: ids = strided(0, r.n_e, r.keep, "even"); break;
      case PruneStrategy::first_half:
        ids.resize(r.keep);
        std::iota(ids.begin(), ids.end(), 0);
        break;
      case PruneStrategy::last_half:
        ids.resize(r.keep);
        std::iota(ids.begin(), ids.end(), r.n_e - r.keep);
        break;
      case PruneStrategy::activate_count: {
        const auto& s = r.stats->layer(l);
        ids = top_by_score(r.n_e, r.keep, [&](int e) { return s.hard[e]; });
        break;
      }
      case PruneStrategy::soft_count: {
        const auto& s = r.stats->layer(l);
        ids = top_by_score(r.n_e, r.keep, [&](int e) { return s.soft[e]; });
        break;
      }
      case PruneStrategy::random: {
        // Partial Fisher-Yates on the stream (seed, layer).
        CounterStream rng(*r.seed, static_cast<std::uint64_t>(l));
        std::vector<int> pool(r.n_e);
        std::iota(pool.begin(), pool.end(), 0);
        for (int i = 0; i < r.keep; ++i) {
          const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.n_e - i)));
          std::swap(pool[i], pool[j]);
        }
        ids.assign(pool.begin(), pool.begin() + r.keep);
        std::sort(ids.begin(), ids.end());
        break;
      }
    }
  }
  mask.validate(r.n_a);
  return mask;
}

RoutingDecision route_restricted(std::span<const double> logits, const RouterConfig& cfg,
                                 std::span<const int> retained) {
  cfg.validate();
  if (static_cast<int>(retained.size()) < cfg.n_a) {
    throw ValidationError(fmt::format("route_restricted: {} retained experts for n_a={}",
                                      retained.size(), cfg.n_a));
  }
  std::vector<bool> eligible(cfg.n_e, false);
  for (int e : retained) {
    if (e < 0 || e >= cfg.n_e) throw ValidationError("route_restricted: retained index out of range");
    eligible[e] = true;
  }
  return route_among(logits, cfg, eligible);
}

std::int64_t mask_memory_savings(const PruneMask& mask, const ModelConfig& config) {
  config.validate();
  if (mask.n_e != config.n_e) throw ValidationError("mask expert count differs from the model");
  return static_cast<std::int64_t>(mask.n_e - mask.keep) * 3 * config.d_e * config.d *
         config.bytes_per_element * config.n_moe_layers();
}

}  // namespace moeperf
