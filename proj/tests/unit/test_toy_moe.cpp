#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "moeperf/error.hpp"
#include "moeperf/toy_moe.hpp"

using namespace moeperf;

namespace {

// Triple-loop evaluation in double precision.
Eigen::MatrixXd naive_glu(const GLUWeights& w, const HiddenState& h) {
  const auto d = w.d(), d_i = w.d_i(), L = h.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    std::vector<double> mid(d_i);
    for (Eigen::Index r = 0; r < d_i; ++r) {
      double u = 0.0, g = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        u += double(w.up(r, c)) * h(c, t);
        g += double(w.gate(r, c)) * h(c, t);
      }
      const double act = w.activation == Activation::silu ? u / (1.0 + std::exp(-u)) : u;
      mid[r] = act * g;
    }
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index k = 0; k < d_i; ++k) out(r, t) += double(w.down(r, k)) * mid[k];
  }
  return out;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  return (a - ref).norm() / std::max(ref.norm(), 1e-30);
}

RouterConfig router(int n_e, int n_a) {
  RouterConfig c;
  c.n_e = n_e;
  c.n_a = n_a;
  return c;
}

}  // namespace

TEST(Glu, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = random_glu(8, 16, seed);
    const HiddenState h = random_matrix(8, 5, seed, 999, 1.0f);
    EXPECT_LE(rel_err(glu_forward(w, h).cast<double>(), naive_glu(w, h)), 1e-6);
  }
}

TEST(Glu, IdentityWeightsSquareTheInput) {
  GLUWeights w;
  w.up = w.gate = w.down = Eigen::MatrixXf::Identity(6, 6);
  w.activation = Activation::identity;
  const HiddenState h = random_matrix(6, 3, 1, 2, 1.0f);
  const HiddenState expected = h.cwiseProduct(h);
  EXPECT_TRUE(glu_forward(w, h).isApprox(expected, 0.0f));
  EXPECT_TRUE(glu_forward(random_glu(6, 12, 4), HiddenState::Zero(6, 2)).isZero(0.0f));
}

TEST(Glu, DimensionMismatchThrows) {
  EXPECT_THROW(glu_forward(random_glu(8, 16, 0), HiddenState::Zero(7, 1)), std::invalid_argument);
  auto bad = random_glu(8, 16, 0);
  bad.down.resize(8, 15);
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Split, PartsSumToOriginal) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = random_glu(16, 64, seed);
    const HiddenState h = random_matrix(16, 4, seed, 77, 1.0f);
    const auto ref = naive_glu(w, h);
    for (int parts : {1, 8, 64}) {
      const auto experts = split_glu_into_experts(w, parts);
      ASSERT_EQ(static_cast<int>(experts.size()), parts);
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(16, 4);
      for (const auto& e : experts) sum += glu_forward(e, h).cast<double>();
      EXPECT_LE(rel_err(sum, ref), 1e-5) << "parts=" << parts;
    }
    const auto same = split_glu_into_experts(w, 1);
    EXPECT_EQ(same[0].up, w.up);
    EXPECT_EQ(same[0].down, w.down);
  }
  EXPECT_THROW(split_glu_into_experts(random_glu(4, 10, 0), 3), ValidationError);
}

TEST(MoeForward, SingleExpertReducesToGlu) {
  ToyMoELayer layer = random_layer({8, 16, 0, Activation::silu}, router(1, 1), 5);
  MoeForwardOptions opt;
  opt.weight_override = std::vector<double>{1.0};
  const HiddenState h = random_matrix(8, 3, 5, 6, 1.0f);
  EXPECT_LE(rel_err(moe_forward(layer, h, opt).cast<double>(), naive_glu(layer.experts[0], h)), 1e-6);
}

TEST(MoeForward, OutputIsSharedPlusWeightedSelected) {
  const auto layer = random_layer({8, 4, 12, Activation::silu}, router(16, 6), 8);
  const HiddenState h = random_matrix(8, 4, 8, 1, 1.0f);
  const auto traced = moe_forward_traced(layer, h);
  for (Eigen::Index t = 0; t < h.cols(); ++t) {
    const HiddenState col = h.col(t);
    Eigen::MatrixXd ref = naive_glu(*layer.shared, col);
    const auto& dec = traced.decisions[t];
    ASSERT_EQ(dec.selected.size(), 6u);
    for (std::size_t k = 0; k < dec.selected.size(); ++k) ref += dec.weights[k] * naive_glu(layer.experts[dec.selected[k]], col);
    EXPECT_LE(rel_err(traced.output.col(t).cast<double>(), ref), 1e-5);
  }
}

TEST(MoeForward, SkippingUsesTopKPrefix) {
  const auto layer = random_layer({8, 4, 0, Activation::silu}, router(16, 6), 13);
  const HiddenState h = random_matrix(8, 6, 13, 4, 1.0f);
  const auto full = moe_forward_traced(layer, h);
  MoeForwardOptions two;
  two.n_a_override = 2;
  const auto skip = moe_forward_traced(layer, h, two);
  for (std::size_t t = 0; t < full.decisions.size(); ++t) {
    const std::vector<int> prefix(full.decisions[t].selected.begin(), full.decisions[t].selected.begin() + 2);
    EXPECT_EQ(skip.decisions[t].selected, prefix);
  }
}

TEST(MoeForward, MaskedFavoriteIsReplaced) {
  const auto layer = random_layer({8, 4, 0, Activation::silu}, router(8, 2), 21);
  const HiddenState h = random_matrix(8, 1, 21, 3, 1.0f);
  const auto full = moe_forward_traced(layer, h);
  const int favorite = full.decisions[0].selected[0];
  std::vector<int> retained;
  for (int i = 0; i < 8; ++i)
    if (i != favorite) retained.push_back(i);
  MoeForwardOptions opt;
  opt.mask = retained;
  const auto masked = moe_forward_traced(layer, h, opt);
  // Brute force over the retained set using the stored logits.
  const auto& logits = full.decisions[0].logits;
  std::vector<int> order = retained;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  EXPECT_EQ(masked.decisions[0].selected, (std::vector<int>{order[0], order[1]}));
  EXPECT_EQ(masked.decisions[0].selected[0], full.decisions[0].selected[1]);
  MoeForwardOptions tiny;
  tiny.mask = std::vector<int>{3};
  EXPECT_THROW(moe_forward(layer, h, tiny), ValidationError);
}

TEST(MoeForward, Deterministic) {
  const auto a = random_layer({8, 4, 12, Activation::silu}, router(16, 6), 31);
  const auto b = random_layer({8, 4, 12, Activation::silu}, router(16, 6), 31);
  const HiddenState h = random_matrix(8, 4, 31, 0, 1.0f);
  EXPECT_EQ(moe_forward(a, h), moe_forward(b, h));
}

TEST(WeightDump, RoundTripAndCorruption) {
  const auto layer = random_layer({8, 4, 12, Activation::silu}, router(16, 6), 2);
  const auto bytes = dump_layer(layer);
  const auto back = load_layer(std::span<const std::uint8_t>(bytes));
  EXPECT_EQ(dump_layer(back), bytes);
  const HiddenState h = random_matrix(8, 2, 2, 2, 1.0f);
  EXPECT_EQ(moe_forward(back, h), moe_forward(layer, h));

  auto corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(load_layer(std::span<const std::uint8_t>(corrupt)), ValidationError);
  auto truncated = bytes;
  truncated.resize(20);
  EXPECT_THROW(load_layer(std::span<const std::uint8_t>(truncated)), ValidationError);

  const auto path = std::filesystem::temp_directory_path() / "moeperf_toy_dump_test.bin";
  save_layer(layer, path);
  EXPECT_EQ(dump_layer(load_layer(path)), bytes);
  std::filesystem::remove(path);
}
