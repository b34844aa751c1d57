#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "moeperf/error.hpp"
#include "moeperf/routing.hpp"

using namespace moeperf;

namespace {

RouterConfig softmax_cfg(int n_e, int n_a) {
  RouterConfig c;
  c.kind = RouterKind::softmax;
  c.n_e = n_e;
  c.n_a = n_a;
  return c;
}

// Brute-force reference: sort every eligible index by (logit desc, index asc).
std::vector<int> brute_topk(const std::vector<double>& logits, int k, const std::vector<bool>& eligible) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(logits.size()); ++i)
    if (eligible[i]) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  idx.resize(std::min<std::size_t>(idx.size(), k));
  return idx;
}

std::vector<double> brute_weights(const std::vector<double>& logits, const std::vector<int>& sel, RouterKind kind) {
  std::vector<double> w;
  double sum = 0.0;
  for (int i : sel) {
    const double v = kind == RouterKind::softmax ? std::exp(logits[i]) : 1.0 / (1.0 + std::exp(-logits[i]));
    w.push_back(v);
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

TEST(Route, SoftmaxHandExample) {
  const std::vector<double> logits{2.0, 1.0, 0.5, -1.0};
  const auto d = route(logits, softmax_cfg(4, 2));
  EXPECT_EQ(d.selected, (std::vector<int>{0, 1}));
  EXPECT_NEAR(d.weights[0], 0.7311, 1e-4);
  EXPECT_NEAR(d.weights[1], 0.2689, 1e-4);
}

TEST(Route, SigmoidHandExample) {
  auto cfg = softmax_cfg(2, 2);
  cfg.kind = RouterKind::sigmoid;
  const auto d = route(std::vector<double>{2.0, 1.0}, cfg);
  EXPECT_NEAR(d.weights[0], 0.5464, 1e-4);
  EXPECT_NEAR(d.weights[1], 0.4536, 1e-4);
  cfg.normalize_selected = false;
  const auto raw = route(std::vector<double>{2.0, 1.0}, cfg);
  EXPECT_NEAR(raw.weights[0], 0.8808, 1e-4);
  EXPECT_NEAR(raw.weights[1], 0.7311, 1e-4);
}

TEST(Route, SoftmaxWithoutRenormalizationUsesFullSoftmax) {
  auto cfg = softmax_cfg(3, 1);
  cfg.normalize_selected = false;
  const auto d = route(std::vector<double>{0.0, 0.0, 0.0}, cfg);
  EXPECT_EQ(d.selected, std::vector<int>{0});
  EXPECT_NEAR(d.weights[0], 1.0 / 3.0, 1e-12);
}

TEST(Route, EqualLogitsTieToLowerIndex) {
  const auto d = route(std::vector<double>(8, 0.25), softmax_cfg(8, 2));
  EXPECT_EQ(d.selected, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(d.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(d.weights[1], 0.5);
}

TEST(Route, GroupLimitedRestrictsToBestGroups) {
  auto cfg = softmax_cfg(8, 2);
  cfg.group = GroupConfig{4, 1};
  // Group 0 = {0,1}: top-2 sum 1.8. Group 3 = {6,7}: top-2 sum 2.0, holds only the 2nd and 3rd best logits.
  const std::vector<double> logits{1.5, 0.3, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0};
  const auto d = route(logits, cfg);
  EXPECT_EQ(d.selected, (std::vector<int>{6, 7}));
  cfg.group_score = GroupScore::max;
  EXPECT_EQ(route(logits, cfg).selected, (std::vector<int>{0, 1}));
}

TEST(Route, MatchesBruteForceOnRandomLogits) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal;
  for (RouterKind kind : {RouterKind::softmax, RouterKind::sigmoid}) {
    for (int trial = 0; trial < 300; ++trial) {
      auto cfg = softmax_cfg(16, 1 + trial % 6);
      cfg.kind = kind;
      std::vector<double> logits(16);
      for (auto& x : logits) x = std::round(normal(gen) * 4.0) / 4.0;  // coarse grid forces ties
      std::vector<bool> eligible(16, true);
      for (int i = 0; i < 16; ++i) eligible[i] = (gen() % 4) != 0;
      if (std::count(eligible.begin(), eligible.end(), true) < cfg.n_a) eligible.assign(16, true);
      const auto d = route_among(logits, cfg, eligible);
      const auto ref = brute_topk(logits, cfg.n_a, eligible);
      ASSERT_EQ(d.selected, ref);
      const auto w = brute_weights(logits, ref, kind);
      for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(d.weights[i], w[i], 1e-12);
    }
  }
}

TEST(Route, PermutationEquivariantForDistinctLogits) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(12);
    for (auto& x : logits) x = normal(gen);
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> permuted(12);
    for (int i = 0; i < 12; ++i) permuted[perm[i]] = logits[i];
    const auto a = route(logits, softmax_cfg(12, 4));
    const auto b = route(permuted, softmax_cfg(12, 4));
    for (int k = 0; k < 4; ++k) {
      EXPECT_EQ(b.selected[k], perm[a.selected[k]]);
      EXPECT_NEAR(b.weights[k], a.weights[k], 1e-15);
    }
  }
}

TEST(Route, RejectsBadInput) {
  EXPECT_THROW(route(std::vector<double>{1.0, 2.0}, softmax_cfg(3, 1)), std::invalid_argument);
  EXPECT_THROW(route(std::vector<double>{1.0, 2.0}, softmax_cfg(2, 3)), std::invalid_argument);
  auto cfg = softmax_cfg(8, 2);
  cfg.group = GroupConfig{3, 1};  // 8 not divisible by 3
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_THROW(route(std::vector<double>{1.0, NAN}, softmax_cfg(2, 1)), std::invalid_argument);
}

TEST(PreTopk, ProbabilitiesSumToOneForSoftmax) {
  const auto p = pre_topk_probabilities(std::vector<double>{3.0, 1.0, -2.0, 0.5}, RouterKind::softmax);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  const auto s = pre_topk_probabilities(std::vector<double>{0.0}, RouterKind::sigmoid);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
}

TEST(DistinctExperts, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(expected_distinct_experts(64, 6, 1), 6.0);
  EXPECT_NEAR(expected_distinct_experts(64, 6, 32), 61.26, 0.2);
  EXPECT_NEAR(expected_distinct_experts(64, 6, 100000), 64.0, 1e-9);
  EXPECT_DOUBLE_EQ(expected_distinct_experts(64, 64, 3), 64.0);
  // Independent evaluation of the formula.
  for (std::int64_t T : {1, 2, 5, 17, 200}) {
    const double ref = 64.0 * (1.0 - std::pow(58.0 / 64.0, static_cast<double>(T)));
    EXPECT_NEAR(expected_distinct_experts(64, 6, T), ref, 1e-9);
  }
}

TEST(DistinctExperts, SkewedFormReducesToUniform) {
  const std::vector<double> uniform(64, 1.0 / 64.0);
  for (std::int64_t T : {1, 8, 32, 128})
    EXPECT_NEAR(expected_distinct_experts(uniform, 6, T), expected_distinct_experts(64, 6, T), 1e-9);
  std::vector<double> skew(64, 0.0);
  for (int i = 0; i < 64; ++i) skew[i] = i < 8 ? 0.1 : 0.2 / 56.0;
  EXPECT_LT(expected_distinct_experts(skew, 6, 32), expected_distinct_experts(64, 6, 32));
}

TEST(DistinctExperts, MonteCarloAgreesWithinThreeSigma) {
  for (std::int64_t T : {1, 8, 32, 128}) {
    const auto s = sample_distinct_experts(64, 6, T, 20000, 3);
    const double closed = expected_distinct_experts(64, 6, T);
    EXPECT_LE(std::abs(s.mean - closed), 3.0 * s.std_error + 1e-12) << "T=" << T;
    EXPECT_EQ(s.counts.size(), 20000u);
  }
}

TEST(DistinctExperts, SamplingIsIndependentOfWorkerCount) {
  const auto a = sample_distinct_experts(64, 6, 16, 500, 42, 1);
  const auto b = sample_distinct_experts(64, 6, 16, 500, 42, 4);
  EXPECT_EQ(a.counts, b.counts);
  const auto c = sample_distinct_experts(64, 6, 16, 500, 43, 1);
  EXPECT_NE(a.counts, c.counts);
}

TEST(BatchRouting, DeterministicAndConservesCounts) {
  const auto cfg = softmax_cfg(64, 6);
  const auto a = simulate_batch_routing(cfg, 300, std::nullopt, 5, 1);
  const auto b = simulate_batch_routing(cfg, 300, std::nullopt, 5, 3);
  EXPECT_EQ(a.distinct_count, b.distinct_count);
  EXPECT_EQ(a.stats, b.stats);
  a.stats.check_invariants(6);
  const auto& layer = a.stats.layer(0);
  EXPECT_EQ(std::accumulate(layer.hard.begin(), layer.hard.end(), std::int64_t{0}), 300 * 6);
  EXPECT_EQ(a.distinct_count, std::count_if(layer.hard.begin(), layer.hard.end(), [](auto h) { return h > 0; }));
}

TEST(RoutingStats, AccumulateJsonRoundTripAndDigest) {
  const auto cfg = softmax_cfg(4, 2);
  std::vector<StatsRecord> stream;
  const std::vector<std::vector<double>> logit_rows{{2, 1, 0.5, -1}, {0, 3, 1, 1}, {1, 1, 1, 1}};
  for (int t = 0; t < 3; ++t) {
    StatsRecord r;
    r.layer = t % 2;
    r.decision = route(logit_rows[t], cfg);
    r.probabilities = pre_topk_probabilities(logit_rows[t], cfg.kind);
    stream.push_back(r);
  }
  const auto stats = accumulate_stats(stream, 4);
  stats.check_invariants(2);
  EXPECT_EQ(stats.layer(0).hard, (std::vector<std::int64_t>{2, 2, 0, 0}));
  EXPECT_EQ(stats.layer(1).hard, (std::vector<std::int64_t>{0, 1, 1, 0}));
  EXPECT_EQ(stats.layer(0).tokens_seen, 2);
  // Soft mass per token is the full softmax, so it sums to tokens_seen.
  const auto& soft = stats.layer(0).soft;
  EXPECT_NEAR(std::accumulate(soft.begin(), soft.end(), 0.0), 2.0, 1e-12);
  const auto back = RoutingStats::from_json(stats.to_json());
  EXPECT_EQ(back, stats);
  EXPECT_EQ(back.digest(), stats.digest());
  EXPECT_EQ(stats.digest().size(), 16u);

  const auto selected_only = accumulate_stats(stream, 4, SoftCountMode::selected_only);
  EXPECT_EQ(selected_only.layer(0).soft[3], 0.0);
  EXPECT_NE(selected_only.digest(), stats.digest());
}

TEST(RoutingStats, RejectsMalformedJson) {
  EXPECT_ANY_THROW(RoutingStats::from_json("{"));
  EXPECT_ANY_THROW(RoutingStats::from_json(R"({"0": {"hard": [1], "soft": [0.1, 0.2], "tokens_seen": 1}})"));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
