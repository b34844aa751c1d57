#include <gtest/gtest.h>

#include "moeperf/error.hpp"
#include "moeperf/parallel_comm.hpp"

using namespace moeperf;

namespace {
ParallelConfig cfg(int n_d, int n_a, std::int64_t L = 1024, std::int64_t d = 2048) {
  ParallelConfig c;
  c.n_devices = n_d;
  c.n_a = n_a;
  c.tokens = L;
  c.d = d;
  return c;
}
}  // namespace

TEST(CommVolume, GoldenValues) {
  EXPECT_EQ(tp_comm_volume(cfg(8, 2)), 29360128);
  EXPECT_EQ(ep_comm_volume(cfg(8, 2)), 8388608);
  EXPECT_EQ(tp_comm_volume(cfg(1, 2)), 0);
  EXPECT_EQ(ep_comm_volume(cfg(8, 0)), 0);
  EXPECT_DOUBLE_EQ(static_cast<double>(ep_comm_volume(cfg(8, 2))) / tp_comm_volume(cfg(8, 2)), 2.0 / 7.0);
}

TEST(CommVolume, LinearInTokensAndHidden) {
  for (int n_d : {2, 4, 8, 16}) {
    for (int n_a : {1, 2, 6, 8}) {
      EXPECT_EQ(tp_comm_volume(cfg(n_d, n_a, 2048)), 2 * tp_comm_volume(cfg(n_d, n_a, 1024)));
      EXPECT_EQ(ep_comm_volume(cfg(n_d, n_a, 1024, 4096)), 2 * ep_comm_volume(cfg(n_d, n_a, 1024, 2048)));
      if (n_a < n_d - 1) EXPECT_LT(ep_comm_volume(cfg(n_d, n_a)), tp_comm_volume(cfg(n_d, n_a)));
    }
  }
}

TEST(GroupLimited, BoundsAndOrdering) {
  const auto c = cfg(8, 8);
  EXPECT_EQ(group_limited_ep_volume(c, 8), ep_comm_volume(c));
  EXPECT_EQ(group_limited_ep_volume(c, 2), 2 * 2 * 1024 * 2048);
  EXPECT_EQ(group_limited_ep_volume(c, 1), 2 * 1024 * 2048);
  for (int g = 1; g <= 8; ++g) EXPECT_LE(group_limited_ep_volume(c, g), ep_comm_volume(c));
  EXPECT_THROW(group_limited_ep_volume(c, 0), ValidationError);
  EXPECT_THROW(group_limited_ep_volume(c, 9), ValidationError);
}

TEST(CommTime, BandwidthRatiosFromPresets) {
  const auto hw = load_hardware_preset("a800");
  EXPECT_DOUBLE_EQ(link_bandwidth(Placement::inter_node, hw) / link_bandwidth(Placement::intra_node, hw), 0.3125);
  auto intra = cfg(8, 2);
  auto inter = cfg(8, 2);
  inter.placement = Placement::inter_node;
  const double ratio = comm_time(ep_comm_volume(inter), inter, hw) / comm_time(tp_comm_volume(intra), intra, hw);
  EXPECT_NEAR(ratio, (2.0 / 7.0) * (160.0 / 50.0), 1e-12);
  EXPECT_DOUBLE_EQ(comm_time(0, intra, hw), 0.0);
  EXPECT_DOUBLE_EQ(comm_time(1000, intra, hw), 2000.0 / 160e9);
}

TEST(CommTime, ZeroBandwidthIsAnError) {
  auto hw = load_hardware_preset("a800");
  hw.inter_node_bw = 0.0;
  auto c = cfg(8, 2);
  c.placement = Placement::inter_node;
  EXPECT_THROW(comm_time(10, c, hw), ValidationError);
}

TEST(ParallelConfig, Validation) {
  EXPECT_THROW(cfg(1, 2).validate(), ValidationError);
  EXPECT_NO_THROW(cfg(2, 2).validate());
  EXPECT_THROW(cfg(8, 2, 0).validate(), ValidationError);
  EXPECT_EQ(to_string(Placement::inter_node), "inter_node");
}
