#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "moeperf/routing.hpp"

namespace moeperf {

enum class Activation { silu, identity };

// Hidden states are d x L blocks, one column per token.
using HiddenState = Eigen::MatrixXf;

struct GLUWeights {
  Eigen::MatrixXf up;    // d_i x d
  Eigen::MatrixXf gate;  // d_i x d
  Eigen::MatrixXf down;  // d x d_i
  Activation activation = Activation::silu;

  Eigen::Index d() const { return up.cols(); }
  Eigen::Index d_i() const { return up.rows(); }
  void validate() const;
};

struct ToyMoELayer {
  std::vector<GLUWeights> experts;
  std::optional<GLUWeights> shared;
  Eigen::MatrixXf router;  // n_e x d
  RouterConfig router_cfg;

  Eigen::Index d() const { return router.cols(); }
  void validate() const;
};

/// down * (act(up * h) .* (gate * h)).
HiddenState glu_forward(const GLUWeights& w, const HiddenState& h);

struct MoeForwardOptions {
  std::optional<int> n_a_override;
  std::optional<std::vector<int>> mask;              // retained experts
  std::optional<std::vector<double>> weight_override;  // replaces gate weights, aligned with selection
};

struct MoeForwardResult {
  HiddenState output;
  std::vector<RoutingDecision> decisions;  // one per token
};

/// Shared expert (weight 1) plus the gate-weighted routed experts, token by
/// token.
MoeForwardResult moe_forward_traced(const ToyMoELayer& layer, const HiddenState& h,
                                    const MoeForwardOptions& options = {});

HiddenState moe_forward(const ToyMoELayer& layer, const HiddenState& h,
                        const MoeForwardOptions& options = {});

/// Splits the intermediate dimension into `parts` equal blocks: row blocks of
/// up/gate and the matching column blocks of down.
std::vector<GLUWeights> split_glu_into_experts(const GLUWeights& w, int parts);

/// Entries uniform in [-scale, scale] from the stream (seed, stream_id).
Eigen::MatrixXf random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                              std::uint64_t stream_id, float scale = 0.1f);

GLUWeights random_glu(Eigen::Index d, Eigen::Index d_i, std::uint64_t seed,
                      Activation activation = Activation::silu, std::uint64_t stream_base = 0);

struct ToyLayerShape {
  int d = 8;
  int d_e = 4;
  int d_s = 0;  // 0 means no shared expert
  Activation activation = Activation::silu;
};

ToyMoELayer random_layer(const ToyLayerShape& shape, const RouterConfig& cfg, std::uint64_t seed);

// Flat little-endian binary layout:
//   magic "TMOE", u32 version, u32 n_e, n_a, d, d_e, d_s, router_kind,
//   normalize_selected, activation, n_group, topk_group   (n_group 0 = none)
//   f32 router[n_e*d] row-major, then per expert up, gate, down (row-major),
//   then the shared expert's up, gate, down when d_s > 0,
//   u64 FNV-1a of every preceding byte.
std::vector<std::uint8_t> dump_layer(const ToyMoELayer& layer);
ToyMoELayer load_layer(std::span<const std::uint8_t> bytes);

void save_layer(const ToyMoELayer& layer, const std::filesystem::path& path);
ToyMoELayer load_layer(const std::filesystem::path& path);

}  // namespace moeperf
