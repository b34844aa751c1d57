#include <cmath>

#include <gtest/gtest.h>

#include "moeperf/model_config.hpp"
#include "moeperf/roofline.hpp"
#include "moeperf/routing.hpp"

using namespace moeperf;

namespace {

// Exact element/FLOP counts evaluated independently in long double.
long double io_oracle(long double d, long double d_i, long double L) {
  return 3.0L * d_i * d + 2.0L * L * (d + d_i);
}
long double flops_oracle(long double d, long double d_i, long double L) { return 6.0L * L * d_i * d; }

HardwareProfile unit_hw() {
  HardwareProfile hw;
  hw.name = "unit";
  hw.peak_flops = 1.0;
  hw.mem_bw = 1.0;
  hw.intra_node_bw = 1.0;
  hw.inter_node_bw = 1.0;
  return hw;
}

}  // namespace

TEST(FfnCounts, GoldenValues) {
  EXPECT_EQ(ffn_io({2048, 10944, 1}), 67265920);
  EXPECT_EQ(ffn_flops({2048, 10944, 128}), 17213423616LL);
  EXPECT_EQ(ffn_io({1, 1, 1}), 7);
  EXPECT_EQ(ffn_flops({1, 1, 1}), 6);
}

TEST(FfnCounts, MatchOracleAndAreLinearInL) {
  for (std::int64_t d : {1, 7, 2048, 7168}) {
    for (std::int64_t d_i : {1, 64, 1408, 10944}) {
      for (std::int64_t L : {1, 2, 3, 150, 4096}) {
        EXPECT_EQ(static_cast<long double>(ffn_io({d, d_i, L})), io_oracle(d, d_i, L));
        EXPECT_EQ(static_cast<long double>(ffn_flops({d, d_i, L})), flops_oracle(d, d_i, L));
        EXPECT_EQ(ffn_io({d, d_i, 2 * L}) - ffn_io({d, d_i, L}), 2 * L * (d + d_i));
        EXPECT_EQ(ffn_flops({d, d_i, 2 * L}), 2 * ffn_flops({d, d_i, L}));
      }
    }
  }
}

TEST(ArithmeticIntensity, GoldenValueAndAsymptote) {
  EXPECT_NEAR(arithmetic_intensity({2048, 10944, 1}), 1.9992, 1e-3);
  EXPECT_NEAR(arithmetic_intensity_limit(2048, 10944), 5175.5, 0.05);
  EXPECT_NEAR(arithmetic_intensity({2048, 10944, 10000000000LL}), arithmetic_intensity_limit(2048, 10944), 0.1);
}

TEST(ArithmeticIntensity, IsExactlyTheRatioAndIncreasesWithL) {
  for (std::int64_t d : {1, 16, 2048}) {
    for (std::int64_t d_i : {1, 64, 10944}) {
      double prev = 0.0;
      for (std::int64_t L = 1; L <= 512; L *= 2) {
        const RooflineQuery q{d, d_i, L};
        const double ai = arithmetic_intensity(q);
        EXPECT_EQ(ai, static_cast<double>(ffn_flops(q)) / static_cast<double>(ffn_io(q)));
        EXPECT_GT(ai, prev);
        EXPECT_LT(ai, arithmetic_intensity_limit(d, d_i));
        prev = ai;
      }
    }
  }
}

TEST(RooflineQuery, RejectsNonPositiveSizes) {
  EXPECT_THROW(ffn_io({0, 1, 1}), std::invalid_argument);
  EXPECT_THROW(ffn_flops({1, 1, 0}), std::invalid_argument);
}

TEST(Latency, MemoryBoundAndTieRule) {
  auto hw = unit_hw();
  const auto a = latency(2.0, 0.0, hw);
  EXPECT_DOUBLE_EQ(a.time_s, 2.0);
  EXPECT_EQ(a.bound, Bound::memory);
  const auto tie = latency(5.0, 5.0, hw);
  EXPECT_DOUBLE_EQ(tie.time_s, 5.0);
  EXPECT_EQ(tie.bound, Bound::compute);
  const auto c = latency(1.0, 3.0, hw);
  EXPECT_EQ(c.bound, Bound::compute);
  EXPECT_DOUBLE_EQ(c.time_s, 3.0);
}

TEST(Latency, SmallBatchesCostAlmostNothingExtra) {
  const auto hw = load_hardware_preset("a800");
  const auto one = ffn_estimate({2048, 10944, 1}, hw);
  const auto two = ffn_estimate({2048, 10944, 2}, hw);
  EXPECT_EQ(one.bound, Bound::memory);
  EXPECT_EQ(two.bound, Bound::memory);
  EXPECT_NEAR((two.time_s / 2.0) / (one.time_s / 2.0), 1.0, 0.01);
}

TEST(Latency, PerTokenTimeFallsThenScalesLinearly) {
  const auto hw = load_hardware_preset("a800");
  const auto knee = *knee_length(2048, 10944, hw);
  double prev = INFINITY;
  for (std::int64_t L = 1; L < knee; ++L) {
    const double per_token = ffn_estimate({2048, 10944, L}, hw).time_s / static_cast<double>(L);
    EXPECT_LE(per_token, prev);
    prev = per_token;
  }
  for (std::int64_t L = knee; L < 4 * knee; L += 37) {
    const auto a = ffn_estimate({2048, 10944, L}, hw);
    const auto b = ffn_estimate({2048, 10944, 2 * L}, hw);
    ASSERT_EQ(a.bound, Bound::compute);
    EXPECT_NEAR(b.time_s, 2.0 * a.time_s, 1e-15 * b.time_s);
  }
}

TEST(KneeLength, A800V2LiteFfn) {
  const auto hw = load_hardware_preset("a800");
  const auto knee = knee_length(2048, 10944, hw);
  ASSERT_TRUE(knee.has_value());
  // Oracle: linear scan with the roofline comparison written out directly.
  std::int64_t scan = 1;
  while (flops_oracle(2048, 10944, scan) / 312e12L < io_oracle(2048, 10944, scan) * 2.0L / 1.935e12L) ++scan;
  EXPECT_EQ(*knee, scan);
  EXPECT_EQ(*knee, 172);  // regression snapshot
  EXPECT_GE(*knee, 135);
  EXPECT_LE(*knee, 185);
  EXPECT_LE(std::abs(*knee - 150), 25);
  const double approx = knee_length_approx(hw);
  EXPECT_NEAR(approx, 161.24, 0.01);
  EXPECT_GE(static_cast<double>(*knee), approx);
  EXPECT_LE(static_cast<double>(*knee), 1.1 * approx);
}

TEST(KneeLength, ScanOracleAcrossShapes) {
  const auto hw = load_hardware_preset("h200");
  for (std::int64_t d : {512, 2048, 7168}) {
    for (std::int64_t d_i : {1408, 10944, 18432}) {
      const auto knee = knee_length(d, d_i, hw);
      ASSERT_TRUE(knee.has_value());
      EXPECT_EQ(ffn_estimate({d, d_i, *knee}, hw).bound, Bound::compute);
      EXPECT_EQ(ffn_estimate({d, d_i, *knee - 1}, hw).bound, Bound::memory);
    }
  }
}

TEST(KneeLength, UnboundedWhenComputeNeverDominates) {
  auto hw = load_hardware_preset("a800");
  hw.peak_flops = 1e300;
  EXPECT_FALSE(knee_length(2048, 10944, hw).has_value());
}

TEST(MoeLayer, SingleTokenLoadsExactlyItsExperts) {
  const auto m = load_model_preset("v2-lite");
  const auto hw = load_hardware_preset("a800");
  const auto est = moe_layer_estimate(m, 1, 6, 64, hw);
  EXPECT_DOUBLE_EQ(est.distinct_experts, 6.0);
  const long double io = 3.0L * 10944 * 2048 + 3.0L * 1408 * 2048 * 6 + 64.0L * 2048 +
                         2.0L * (2048 + 10944 + 6 * 1408);
  EXPECT_NEAR(est.total.io_elements, static_cast<double>(io), 1e-6);
  EXPECT_NEAR(est.total.flops, 6.0 * (10944 + 6 * 1408) * 2048 + 2.0 * 64 * 2048, 1e-3);
}

TEST(MoeLayer, SaturatesAtAllExpertsForLargeBatches) {
  const auto m = load_model_preset("v2-lite");
  const auto hw = load_hardware_preset("a800");
  const auto big = moe_layer_estimate(m, 100000, 6, 64, hw);
  EXPECT_NEAR(big.distinct_experts, 64.0, 1e-9);
  const auto bigger = moe_layer_estimate(m, 200000, 6, 64, hw);
  EXPECT_DOUBLE_EQ(bigger.weight_elements, big.weight_elements);
  // Past saturation the only T-dependent I/O is activations, so AI keeps growing.
  EXPECT_GT(bigger.total.ai_elements, big.total.ai_elements);
}

TEST(MoeLayer, ReducesToDenseFfnWithOneExpertAndNoSharedExpert) {
  auto m = load_model_preset("v2-lite");
  m.d_s = 0;
  m.n_e = 1;
  m.n_a = 1;
  const auto hw = load_hardware_preset("a800");
  for (std::int64_t T : {1, 7, 128, 4096}) {
    const auto moe = moe_layer_estimate(m, T, 1, 1, hw);
    const RooflineQuery q{m.d, m.d_e, T};
    EXPECT_EQ(moe.expert_flops, static_cast<double>(ffn_flops(q)));
    EXPECT_EQ(moe.weight_elements + moe.activation_elements, static_cast<double>(ffn_io(q)));
  }
}

TEST(MoeLayer, BatchingHelpsButKneeComesLaterThanDense) {
  const auto m = load_model_preset("v2-lite");
  const auto hw = load_hardware_preset("a800");
  const double t8 = moe_layer_estimate(m, 8, 6, 64, hw).total.time_s / 8.0;
  const double t64 = moe_layer_estimate(m, 64, 6, 64, hw).total.time_s / 64.0;
  EXPECT_LT(t64, t8);
  const auto moe_knee = moe_knee_tokens(m, 6, 64, hw);
  const auto dense_knee = knee_length(m.d, m.d_s + activated_intermediate(m), hw);
  ASSERT_TRUE(moe_knee && dense_knee);
  EXPECT_GT(*moe_knee, *dense_knee);
  EXPECT_EQ(moe_layer_estimate(m, *moe_knee, 6, 64, hw).total.bound, Bound::compute);
  EXPECT_EQ(moe_layer_estimate(m, *moe_knee - 1, 6, 64, hw).total.bound, Bound::memory);
}

TEST(MoeLayer, ExtraBytesAndBounds) {
  const auto m = load_model_preset("v2-lite");
  const auto hw = load_hardware_preset("a800");
  MoeLayerQuery q;
  q.tokens = 4;
  q.n_a_eff = 6;
  q.n_e_eff = 64;
  const auto base = moe_layer_estimate(m, q, hw);
  q.extra_bytes = 1e6;
  const auto more = moe_layer_estimate(m, q, hw);
  EXPECT_DOUBLE_EQ(more.total.io_bytes - base.total.io_bytes, 1e6);
  EXPECT_THROW(moe_layer_estimate(m, 4, 7, 6, hw), std::invalid_argument);
  EXPECT_THROW(moe_layer_estimate(m, 4, 6, 65, hw), std::invalid_argument);
  EXPECT_THROW(moe_layer_estimate(m, 0, 6, 64, hw), std::invalid_argument);
}
