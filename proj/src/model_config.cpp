#include "moeperf/model_config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "moeperf/error.hpp"

namespace moeperf {
namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

// Parsed `key = value` document; remembers which keys were consumed so that
// leftovers can be reported as unknown.
class KeyValueDocument {
 public:
  explicit KeyValueDocument(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      auto line = trim(text.substr(pos, end - pos));
      ++line_no;
      pos = end + 1;
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ValidationError(fmt::format("line {}: expected 'key = value'", line_no));
      }
      std::string key(trim(line.substr(0, eq)));
      std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ValidationError(fmt::format("line {}: empty key", line_no));
      if (!entries_.emplace(key, value).second) {
        throw ValidationError(fmt::format("line {}: duplicate key '{}'", line_no, key));
      }
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string take(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError(fmt::format("missing key '{}'", key));
    std::string value = std::move(it->second);
    entries_.erase(it);
    return value;
  }

  template <typename Int>
  Int take_int(const std::string& key) {
    const auto text = take(key);
    Int value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      throw ValidationError(fmt::format("{}: '{}' is not an integer", key, text));
    }
    return value;
  }

  double take_double(const std::string& key) {
    const auto text = take(key);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text.empty()) {
      throw ValidationError(fmt::format("{}: '{}' is not a number", key, text));
    }
    return value;
  }

  bool take_bool(const std::string& key) {
    const auto text = take(key);
    if (text == "true") return true;
    if (text == "false") return false;
    throw ValidationError(fmt::format("{}: expected true or false, got '{}'", key, text));
  }

  void expect_kind(std::string_view kind) {
    const auto got = take("kind");
    if (got != kind) {
      throw ValidationError(fmt::format("kind: expected '{}', got '{}'", kind, got));
    }
  }

  void reject_leftovers() const {
    if (!entries_.empty()) {
      throw ValidationError(fmt::format("unknown key '{}'", entries_.begin()->first));
    }
  }

 private:
  std::map<std::string, std::string> entries_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open config file '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ModelConfig v2_lite() {
  ModelConfig c;
  c.name = "v2-lite";
  c.d = 2048;
  c.d_e = 1408;
  c.d_s = 10944;
  c.n_e = 64;
  c.n_a = 6;
  c.n_layers_total = 27;
  c.n_layers_dense = 1;
  c.router_kind = RouterKind::softmax;
  c.normalize_selected = true;
  return c;
}

ModelConfig v3() {
  ModelConfig c;
  c.name = "v3";
  c.d = 7168;
  c.d_e = 2048;
  c.d_s = 18432;
  c.n_e = 256;
  c.n_a = 8;
  c.n_layers_total = 61;
  c.n_layers_dense = 3;
  c.router_kind = RouterKind::sigmoid;
  c.normalize_selected = true;
  c.group = GroupConfig{8, 2};
  return c;
}

// Vendor-nominal dense half-precision rates; link rates are the NVLink and
// InfiniBand figures used for the TP/EP comparison.
HardwareProfile a800() {
  return {"a800", 312e12, 1.935e12, 160e9, 50e9, 8};
}

HardwareProfile h200() {
  return {"h200", 989e12, 4.8e12, 160e9, 50e9, 8};
}

}  // namespace

std::string_view to_string(RouterKind kind) {
  return kind == RouterKind::softmax ? "softmax" : "sigmoid";
}

RouterKind parse_router_kind(std::string_view text) {
  if (text == "softmax") return RouterKind::softmax;
  if (text == "sigmoid") return RouterKind::sigmoid;
  throw ValidationError(fmt::format("router_kind: unknown kind '{}'", text));
}

void ModelConfig::validate() const {
  auto fail = [](std::string_view field, std::string_view why) {
    throw ValidationError(fmt::format("{}: {}", field, why));
  };
  if (d <= 0) fail("d", "must be positive");
  if (d_e <= 0) fail("d_e", "must be positive");
  if (d_s <= 0) fail("d_s", "must be positive");
  if (n_e < 1) fail("n_e", "must be at least 1");
  if (n_a < 1) fail("n_a", "must be at least 1");
  if (n_a > n_e) fail("n_a", "must not exceed n_e");
  if (n_layers_total < 1) fail("n_layers_total", "must be at least 1");
  if (n_layers_dense < 0) fail("n_layers_dense", "must be non-negative");
  if (n_layers_dense >= n_layers_total) fail("n_layers_dense", "must be below n_layers_total");
  if (bytes_per_element < 1) fail("bytes_per_element", "must be at least 1");
  if (group) {
    if (group->n_group < 1) fail("n_group", "must be at least 1");
    if (n_e % group->n_group != 0) fail("n_group", "must divide n_e");
    if (group->topk_group < 1) fail("topk_group", "must be at least 1");
    if (group->topk_group > group->n_group) fail("topk_group", "must not exceed n_group");
  }
}

void HardwareProfile::validate() const {
  auto positive = [](double v, std::string_view field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError(fmt::format("{}: must be a positive finite rate", field));
    }
  };
  positive(peak_flops, "peak_flops");
  positive(mem_bw, "mem_bw");
  positive(intra_node_bw, "intra_node_bw");
  positive(inter_node_bw, "inter_node_bw");
  if (n_devices_per_node < 1) throw ValidationError("n_devices_per_node: must be at least 1");
}

ModelConfig load_model_preset(std::string_view name_or_path) {
  if (name_or_path == "v2-lite") return v2_lite();
  if (name_or_path == "v3") return v3();
  const std::filesystem::path path{std::string(name_or_path)};
  if (!std::filesystem::exists(path)) {
    throw ValidationError(fmt::format("unknown model preset '{}'", name_or_path));
  }
  return model_from_text(read_file(path));
}

HardwareProfile load_hardware_preset(std::string_view name_or_path) {
  if (name_or_path == "a800") return a800();
  if (name_or_path == "h200") return h200();
  const std::filesystem::path path{std::string(name_or_path)};
  if (!std::filesystem::exists(path)) {
    throw ValidationError(fmt::format("unknown hardware preset '{}'", name_or_path));
  }
  return hardware_from_text(read_file(path));
}

std::string to_text(const ModelConfig& c) {
  std::string out = "kind = model\n";
  out += fmt::format("name = {}\n", c.name);
  out += fmt::format("d = {}\nd_e = {}\nd_s = {}\n", c.d, c.d_e, c.d_s);
  out += fmt::format("n_e = {}\nn_a = {}\n", c.n_e, c.n_a);
  out += fmt::format("n_layers_total = {}\nn_layers_dense = {}\n", c.n_layers_total,
                     c.n_layers_dense);
  out += fmt::format("router_kind = {}\n", to_string(c.router_kind));
  out += fmt::format("normalize_selected = {}\n", c.normalize_selected);
  if (c.group) {
    out += fmt::format("n_group = {}\ntopk_group = {}\n", c.group->n_group, c.group->topk_group);
  }
  out += fmt::format("bytes_per_element = {}\n", c.bytes_per_element);
  return out;
}

std::string to_text(const HardwareProfile& hw) {
  // {} prints the shortest representation that parses back to the same double.
  return fmt::format(
      "kind = hardware\nname = {}\npeak_flops = {}\nmem_bw = {}\nintra_node_bw = {}\n"
      "inter_node_bw = {}\nn_devices_per_node = {}\n",
      hw.name, hw.peak_flops, hw.mem_bw, hw.intra_node_bw, hw.inter_node_bw,
      hw.n_devices_per_node);
}

ModelConfig model_from_text(std::string_view text) {
  KeyValueDocument doc(text);
  doc.expect_kind("model");
  ModelConfig c;
  c.name = doc.take("name");
  c.d = doc.take_int<std::int64_t>("d");
  c.d_e = doc.take_int<std::int64_t>("d_e");
  c.d_s = doc.take_int<std::int64_t>("d_s");
  c.n_e = doc.take_int<int>("n_e");
  c.n_a = doc.take_int<int>("n_a");
  c.n_layers_total = doc.take_int<int>("n_layers_total");
  c.n_layers_dense = doc.take_int<int>("n_layers_dense");
  c.router_kind = parse_router_kind(doc.take("router_kind"));
  c.normalize_selected = doc.take_bool("normalize_selected");
  const bool has_group = doc.has("n_group");
  if (has_group != doc.has("topk_group")) {
    throw ValidationError("n_group and topk_group must be given together");
  }
  if (has_group) c.group = GroupConfig{doc.take_int<int>("n_group"), doc.take_int<int>("topk_group")};
  c.bytes_per_element = doc.take_int<int>("bytes_per_element");
  doc.reject_leftovers();
  c.validate();
  return c;
}

HardwareProfile hardware_from_text(std::string_view text) {
  KeyValueDocument doc(text);
  doc.expect_kind("hardware");
  HardwareProfile hw;
  hw.name = doc.take("name");
  hw.peak_flops = doc.take_double("peak_flops");
  hw.mem_bw = doc.take_double("mem_bw");
  hw.intra_node_bw = doc.take_double("intra_node_bw");
  hw.inter_node_bw = doc.take_double("inter_node_bw");
  hw.n_devices_per_node = doc.take_int<int>("n_devices_per_node");
  doc.reject_leftovers();
  hw.validate();
  return hw;
}

std::int64_t activated_intermediate(const ModelConfig& config, std::optional<int> n_a_override) {
  const int n_a = n_a_override.value_or(config.n_a);
  if (n_a < 1 || n_a > config.n_e) {
    throw ValidationError(
        fmt::format("n_a override {} outside [1, {}]", n_a, config.n_e));
  }
  return config.d_e * n_a;
}

double compute_reduction_upper_bound(std::int64_t d_a, std::int64_t d_s) {
  if (d_a <= 0 || d_s < 0) throw ValidationError("reduction bound needs d_a > 0 and d_s >= 0");
  return static_cast<double>(d_a) / static_cast<double>(d_s + d_a);
}

double compute_reduction_upper_bound(const ModelConfig& config) {
  config.validate();
  return compute_reduction_upper_bound(activated_intermediate(config), config.d_s);
}

ReductionBoundCheck check_reduction_bound(const ModelConfig& config) {
  ReductionBoundCheck check;
  check.computed = compute_reduction_upper_bound(config);
  if (config == v2_lite()) check.published = 0.456;
  if (config == v3()) check.published = 0.471;
  if (check.published) {
    check.discrepancy = std::abs(check.computed - *check.published) > 0.0005;
  }
  return check;
}

}  // namespace moeperf
