#include "moeperf/toy_moe.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "moeperf/error.hpp"
#include "moeperf/pruning.hpp"
#include "moeperf/rng.hpp"

namespace moeperf {
namespace {

constexpr char kMagic[4] = {'T', 'M', 'O', 'E'};
constexpr std::uint32_t kVersion = 1;

Eigen::MatrixXf activate(const Eigen::MatrixXf& x, Activation act) {
  if (act == Activation::identity) return x;
  return x.unaryExpr([](float v) { return v / (1.0f + std::exp(-v)); });
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void matrix(const Eigen::MatrixXf& m) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    raw(rm.data(), sizeof(float) * static_cast<std::size_t>(rm.size()));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  Eigen::MatrixXf matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    raw(rm.data(), sizeof(float) * static_cast<std::size_t>(rm.size()));
    return rm;
  }
  void raw(void* p, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError("weight dump: truncated");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_glu(Writer& w, const GLUWeights& g) {
  w.matrix(g.up);
  w.matrix(g.gate);
  w.matrix(g.down);
}

GLUWeights read_glu(Reader& r, Eigen::Index d, Eigen::Index d_i, Activation act) {
  GLUWeights g;
  g.up = r.matrix(d_i, d);
  g.gate = r.matrix(d_i, d);
  g.down = r.matrix(d, d_i);
  g.activation = act;
  return g;
}

}  // namespace

void GLUWeights::validate() const {
  if (up.rows() < 1 || up.cols() < 1) throw ValidationError("glu: empty weights");
  if (gate.rows() != up.rows() || gate.cols() != up.cols()) {
    throw ValidationError("glu: gate shape differs from up");
  }
  if (down.rows() != up.cols() || down.cols() != up.rows()) {
    throw ValidationError("glu: down must be d x d_i");
  }
}

void ToyMoELayer::validate() const {
  router_cfg.validate();
  if (static_cast<int>(experts.size()) != router_cfg.n_e) {
    throw ValidationError("toy layer: expert count differs from router n_e");
  }
  if (router.rows() != router_cfg.n_e) throw ValidationError("toy layer: router rows must equal n_e");
  for (const auto& e : experts) {
    e.validate();
    if (e.d() != d() || e.d_i() != experts.front().d_i() || e.activation != experts.front().activation) {
      throw ValidationError("toy layer: experts differ in shape");
    }
  }
  if (shared) {
    shared->validate();
    if (shared->d() != d()) throw ValidationError("toy layer: shared expert hidden size differs");
  }
}

HiddenState glu_forward(const GLUWeights& w, const HiddenState& h) {
  w.validate();
  if (h.rows() != w.d()) {
    throw ValidationError(fmt::format("glu: hidden size {} but weights expect {}", h.rows(), w.d()));
  }
  const Eigen::MatrixXf up = activate(w.up * h, w.activation);
  const Eigen::MatrixXf gated = up.cwiseProduct(w.gate * h);
  return w.down * gated;
}

MoeForwardResult moe_forward_traced(const ToyMoELayer& layer, const HiddenState& h,
                                    const MoeForwardOptions& options) {
  layer.validate();
  if (h.rows() != layer.d()) throw ValidationError("moe: hidden size mismatch");
  if (!h.allFinite()) throw ValidationError("moe: non-finite hidden state");

  RouterConfig cfg = layer.router_cfg;
  if (options.n_a_override) cfg.n_a = *options.n_a_override;
  cfg.validate();
  if (options.mask && static_cast<int>(options.mask->size()) < cfg.n_a) {
    throw ValidationError(fmt::format("moe: mask retains {} experts, n_a={}", options.mask->size(), cfg.n_a));
  }
  if (options.weight_override && static_cast<int>(options.weight_override->size()) != cfg.n_a) {
    throw ValidationError("moe: weight override length must equal n_a");
  }

  MoeForwardResult result;
  result.output = layer.shared ? glu_forward(*layer.shared, h) : HiddenState::Zero(h.rows(), h.cols());
  const Eigen::MatrixXf logits_block = layer.router * h;
  std::vector<double> logits(cfg.n_e);
  for (Eigen::Index t = 0; t < h.cols(); ++t) {
    for (int e = 0; e < cfg.n_e; ++e) logits[e] = logits_block(e, t);
    RoutingDecision decision = options.mask ? route_restricted(logits, cfg, *options.mask)
                                            : route(logits, cfg);
    if (options.weight_override) decision.weights = *options.weight_override;
    const HiddenState token = h.col(t);
    for (std::size_t i = 0; i < decision.selected.size(); ++i) {
      const auto w = static_cast<float>(decision.weights[i]);
      result.output.col(t) += w * glu_forward(layer.experts[decision.selected[i]], token);
    }
    result.decisions.push_back(std::move(decision));
  }
  return result;
}

HiddenState moe_forward(const ToyMoELayer& layer, const HiddenState& h,
                        const MoeForwardOptions& options) {
  return moe_forward_traced(layer, h, options).output;
}

std::vector<GLUWeights> split_glu_into_experts(const GLUWeights& w, int parts) {
  w.validate();
  if (parts < 1 || w.d_i() % parts != 0) {
    throw ValidationError(fmt::format("split: d_i={} not divisible into {} parts", w.d_i(), parts));
  }
  const Eigen::Index block = w.d_i() / parts;
  std::vector<GLUWeights> out;
  out.reserve(parts);
  for (int k = 0; k < parts; ++k) {
    GLUWeights g;
    g.up = w.up.middleRows(k * block, block);
    g.gate = w.gate.middleRows(k * block, block);
    g.down = w.down.middleCols(k * block, block);
    g.activation = w.activation;
    out.push_back(std::move(g));
  }
  return out;
}

Eigen::MatrixXf random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                              std::uint64_t stream_id, float scale) {
  CounterStream rng(seed, stream_id);
  Eigen::MatrixXf m(rows, cols);
  // Fill row-major so the layout matches the dump format.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = static_cast<float>((2.0 * rng.uniform() - 1.0) * scale);
    }
  }
  return m;
}

GLUWeights random_glu(Eigen::Index d, Eigen::Index d_i, std::uint64_t seed, Activation activation,
                      std::uint64_t stream_base) {
  GLUWeights g;
  g.up = random_matrix(d_i, d, seed, stream_base + 0);
  g.gate = random_matrix(d_i, d, seed, stream_base + 1);
  g.down = random_matrix(d, d_i, seed, stream_base + 2);
  g.activation = activation;
  return g;
}

ToyMoELayer random_layer(const ToyLayerShape& shape, const RouterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ToyMoELayer layer;
  layer.router_cfg = cfg;
  layer.router = random_matrix(cfg.n_e, shape.d, seed, 0, 1.0f);
  for (int e = 0; e < cfg.n_e; ++e) {
    layer.experts.push_back(random_glu(shape.d, shape.d_e, seed, shape.activation, 16 + 4 * e));
  }
  if (shape.d_s > 0) layer.shared = random_glu(shape.d, shape.d_s, seed, shape.activation, 8);
  layer.validate();
  return layer;
}

std::vector<std::uint8_t> dump_layer(const ToyMoELayer& layer) {
  layer.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const auto& cfg = layer.router_cfg;
  w.u32(static_cast<std::uint32_t>(cfg.n_e));
  w.u32(static_cast<std::uint32_t>(cfg.n_a));
  w.u32(static_cast<std::uint32_t>(layer.d()));
  w.u32(static_cast<std::uint32_t>(layer.experts.front().d_i()));
  w.u32(layer.shared ? static_cast<std::uint32_t>(layer.shared->d_i()) : 0U);
  w.u32(cfg.kind == RouterKind::softmax ? 0U : 1U);
  w.u32(cfg.normalize_selected ? 1U : 0U);
  w.u32(layer.experts.front().activation == Activation::silu ? 0U : 1U);
  w.u32(cfg.group ? static_cast<std::uint32_t>(cfg.group->n_group) : 0U);
  w.u32(cfg.group ? static_cast<std::uint32_t>(cfg.group->topk_group) : 0U);
  w.matrix(layer.router);
  for (const auto& e : layer.experts) write_glu(w, e);
  if (layer.shared) write_glu(w, *layer.shared);
  w.u64(fnv1a(w.bytes));
  return std::move(w.bytes);
}

ToyMoELayer load_layer(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 8) throw ValidationError("weight dump: truncated");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
  if (stored != fnv1a(body)) throw ValidationError("weight dump: checksum mismatch");

  Reader r(body);
  char magic[4];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ValidationError("weight dump: bad magic");
  if (r.u32() != kVersion) throw ValidationError("weight dump: unsupported version");
  RouterConfig cfg;
  cfg.n_e = static_cast<int>(r.u32());
  cfg.n_a = static_cast<int>(r.u32());
  const Eigen::Index d = r.u32();
  const Eigen::Index d_e = r.u32();
  const Eigen::Index d_s = r.u32();
  cfg.kind = r.u32() == 0 ? RouterKind::softmax : RouterKind::sigmoid;
  cfg.normalize_selected = r.u32() != 0;
  const Activation act = r.u32() == 0 ? Activation::silu : Activation::identity;
  const auto n_group = static_cast<int>(r.u32());
  const auto topk_group = static_cast<int>(r.u32());
  if (n_group > 0) cfg.group = GroupConfig{n_group, topk_group};
  cfg.validate();
  if (d < 1 || d_e < 1) throw ValidationError("weight dump: empty dimensions");

  const std::size_t expected_floats =
      static_cast<std::size_t>(cfg.n_e * d + cfg.n_e * 3 * d_e * d + 3 * d_s * d);
  if (body.size() - r.pos() != expected_floats * sizeof(float)) {
    throw ValidationError("weight dump: body size does not match header");
  }
  ToyMoELayer layer;
  layer.router_cfg = cfg;
  layer.router = r.matrix(cfg.n_e, d);
  for (int e = 0; e < cfg.n_e; ++e) layer.experts.push_back(read_glu(r, d, d_e, act));
  if (d_s > 0) layer.shared = read_glu(r, d, d_s, act);
  layer.validate();
  return layer;
}

void save_layer(const ToyMoELayer& layer, const std::filesystem::path& path) {
  const auto bytes = dump_layer(layer);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ToyMoELayer load_layer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open weight dump '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_layer(std::span<const std::uint8_t>(bytes));
}

}  // namespace moeperf
