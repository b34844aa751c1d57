#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "moeperf/commands.hpp"
#include "moeperf/error.hpp"
#include "moeperf/fixtures.hpp"
#include "moeperf/model_config.hpp"
#include "moeperf/parallel_comm.hpp"
#include "moeperf/pruning.hpp"
#include "moeperf/roofline.hpp"
#include "moeperf/routing.hpp"
#include "moeperf/serving_sim.hpp"
#include "moeperf/skip_schedule.hpp"
#include "moeperf/verify.hpp"

namespace py = pybind11;
using namespace moeperf;

PYBIND11_MODULE(_moeperf, m) {
  m.doc() = "Analytical performance models for fine-grained mixture-of-experts inference";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  // ---- configuration ----
  py::enum_<RouterKind>(m, "RouterKind").value("softmax", RouterKind::softmax).value("sigmoid", RouterKind::sigmoid);

  py::class_<GroupConfig>(m, "GroupConfig")
      .def(py::init<>())
      .def(py::init([](int n_group, int topk_group) { return GroupConfig{n_group, topk_group}; }),
           py::arg("n_group"), py::arg("topk_group"))
      .def_readwrite("n_group", &GroupConfig::n_group)
      .def_readwrite("topk_group", &GroupConfig::topk_group);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("name", &ModelConfig::name)
      .def_readwrite("d", &ModelConfig::d)
      .def_readwrite("d_e", &ModelConfig::d_e)
      .def_readwrite("d_s", &ModelConfig::d_s)
      .def_readwrite("n_e", &ModelConfig::n_e)
      .def_readwrite("n_a", &ModelConfig::n_a)
      .def_readwrite("n_layers_total", &ModelConfig::n_layers_total)
      .def_readwrite("n_layers_dense", &ModelConfig::n_layers_dense)
      .def_readwrite("router_kind", &ModelConfig::router_kind)
      .def_readwrite("normalize_selected", &ModelConfig::normalize_selected)
      .def_readwrite("group", &ModelConfig::group)
      .def_readwrite("bytes_per_element", &ModelConfig::bytes_per_element)
      .def_property_readonly("n_moe_layers", &ModelConfig::n_moe_layers)
      .def("validate", &ModelConfig::validate)
      .def("to_text", [](const ModelConfig& c) { return to_text(c); });

  py::class_<HardwareProfile>(m, "HardwareProfile")
      .def(py::init<>())
      .def_readwrite("name", &HardwareProfile::name)
      .def_readwrite("peak_flops", &HardwareProfile::peak_flops)
      .def_readwrite("mem_bw", &HardwareProfile::mem_bw)
      .def_readwrite("intra_node_bw", &HardwareProfile::intra_node_bw)
      .def_readwrite("inter_node_bw", &HardwareProfile::inter_node_bw)
      .def_readwrite("n_devices_per_node", &HardwareProfile::n_devices_per_node)
      .def("validate", &HardwareProfile::validate)
      .def("to_text", [](const HardwareProfile& h) { return to_text(h); });

  m.def("load_model", &load_model_preset, py::arg("name_or_path"));
  m.def("load_hardware", &load_hardware_preset, py::arg("name_or_path"));
  m.def("model_from_text", &model_from_text);
  m.def("hardware_from_text", &hardware_from_text);
  m.def("activated_intermediate", &activated_intermediate, py::arg("config"), py::arg("n_a") = std::nullopt);
  m.def("compute_reduction_upper_bound",
        py::overload_cast<const ModelConfig&>(&compute_reduction_upper_bound));

  py::class_<ReductionBoundCheck>(m, "ReductionBoundCheck")
      .def_readonly("computed", &ReductionBoundCheck::computed)
      .def_readonly("published", &ReductionBoundCheck::published)
      .def_readonly("discrepancy", &ReductionBoundCheck::discrepancy);
  m.def("check_reduction_bound", &check_reduction_bound);

  // ---- roofline ----
  py::enum_<Bound>(m, "Bound").value("memory", Bound::memory).value("compute", Bound::compute);

  py::class_<RooflineEstimate>(m, "RooflineEstimate")
      .def_readonly("io_elements", &RooflineEstimate::io_elements)
      .def_readonly("io_bytes", &RooflineEstimate::io_bytes)
      .def_readonly("flops", &RooflineEstimate::flops)
      .def_readonly("ai_elements", &RooflineEstimate::ai_elements)
      .def_readonly("time_s", &RooflineEstimate::time_s)
      .def_readonly("bound", &RooflineEstimate::bound);

  py::class_<MoeLayerEstimate>(m, "MoeLayerEstimate")
      .def_readonly("distinct_experts", &MoeLayerEstimate::distinct_experts)
      .def_readonly("expert_flops", &MoeLayerEstimate::expert_flops)
      .def_readonly("router_flops", &MoeLayerEstimate::router_flops)
      .def_readonly("weight_elements", &MoeLayerEstimate::weight_elements)
      .def_readonly("activation_elements", &MoeLayerEstimate::activation_elements)
      .def_readonly("total", &MoeLayerEstimate::total);

  m.def("ffn_io", [](std::int64_t d, std::int64_t d_i, std::int64_t L) { return ffn_io({d, d_i, L}); },
        py::arg("d"), py::arg("d_i"), py::arg("L"));
  m.def("ffn_flops", [](std::int64_t d, std::int64_t d_i, std::int64_t L) { return ffn_flops({d, d_i, L}); },
        py::arg("d"), py::arg("d_i"), py::arg("L"));
  m.def("arithmetic_intensity",
        [](std::int64_t d, std::int64_t d_i, std::int64_t L) { return arithmetic_intensity({d, d_i, L}); },
        py::arg("d"), py::arg("d_i"), py::arg("L"));
  m.def("ffn_estimate",
        [](std::int64_t d, std::int64_t d_i, std::int64_t L, const HardwareProfile& hw, int bpe) {
          return ffn_estimate({d, d_i, L}, hw, bpe);
        },
        py::arg("d"), py::arg("d_i"), py::arg("L"), py::arg("hw"), py::arg("bytes_per_element") = 2);
  m.def("knee_length", &knee_length, py::arg("d"), py::arg("d_i"), py::arg("hw"), py::arg("bytes_per_element") = 2);
  m.def("moe_layer_estimate",
        py::overload_cast<const ModelConfig&, std::int64_t, int, int, const HardwareProfile&>(&moe_layer_estimate),
        py::arg("config"), py::arg("tokens"), py::arg("n_a"), py::arg("n_e"), py::arg("hw"));

  // ---- routing ----
  py::class_<RouterConfig>(m, "RouterConfig")
      .def(py::init<>())
      .def_readwrite("kind", &RouterConfig::kind)
      .def_readwrite("normalize_selected", &RouterConfig::normalize_selected)
      .def_readwrite("group", &RouterConfig::group)
      .def_readwrite("n_e", &RouterConfig::n_e)
      .def_readwrite("n_a", &RouterConfig::n_a)
      .def_static("from_model", &RouterConfig::from_model, py::arg("model"), py::arg("n_a") = std::nullopt);

  py::class_<RoutingDecision>(m, "RoutingDecision")
      .def_readonly("selected", &RoutingDecision::selected)
      .def_readonly("weights", &RoutingDecision::weights);

  m.def("route", [](const std::vector<double>& logits, const RouterConfig& cfg) { return route(logits, cfg); });
  m.def("route_restricted", [](const std::vector<double>& logits, const RouterConfig& cfg,
                               const std::vector<int>& retained) { return route_restricted(logits, cfg, retained); });
  m.def("expected_distinct_experts", py::overload_cast<int, int, std::int64_t>(&expected_distinct_experts),
        py::arg("n_e"), py::arg("n_a"), py::arg("tokens"));

  py::class_<DistinctSample>(m, "DistinctSample")
      .def_readonly("mean", &DistinctSample::mean)
      .def_readonly("stddev", &DistinctSample::stddev)
      .def_readonly("std_error", &DistinctSample::std_error)
      .def_readonly("counts", &DistinctSample::counts);
  m.def("sample_distinct_experts", &sample_distinct_experts, py::arg("n_e"), py::arg("n_a"), py::arg("tokens"),
        py::arg("trials"), py::arg("seed"), py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());

  // ---- schedules ----
  py::class_<SkipTuple>(m, "SkipTuple")
      .def(py::init([](int b, int h, int e, int p) { return SkipTuple{b, h, e, p}; }), py::arg("b"), py::arg("h"),
           py::arg("e"), py::arg("p"))
      .def_readwrite("b", &SkipTuple::b)
      .def_readwrite("h", &SkipTuple::h)
      .def_readwrite("e", &SkipTuple::e)
      .def_readwrite("p", &SkipTuple::p)
      .def("__repr__", [](const SkipTuple& t) { return "SkipTuple(" + to_string(t) + ")"; });
  m.def("parse_skip_tuple", &parse_skip_tuple);

  py::class_<SkipSchedule>(m, "SkipSchedule")
      .def_readonly("n_a_per_layer", &SkipSchedule::n_a_per_layer)
      .def_readonly("warnings", &SkipSchedule::warnings)
      .def_property_readonly("average_active", [](const SkipSchedule& s) { return average_active(s); })
      .def_property_readonly("shape", [](const SkipSchedule& s) { return std::string(to_string(shape_class(s))); })
      .def("to_csv", [](const SkipSchedule& s) { return schedule_to_csv(s); });
  m.def("build_schedule", py::overload_cast<const SkipTuple&, int, int>(&build_schedule), py::arg("tuple"),
        py::arg("n_layers"), py::arg("n_e"));
  m.def("build_model_schedule",
        [](const SkipTuple& t, const ModelConfig& model, const std::string& space) {
          return build_schedule(t, model, parse_index_space(space));
        },
        py::arg("tuple"), py::arg("model"), py::arg("index_space") = "moe");
  m.def("uniform_schedule", &uniform_schedule, py::arg("n_a"), py::arg("n_layers"));

  // ---- pruning ----
  py::class_<PruneMask>(m, "PruneMask")
      .def_readonly("keep", &PruneMask::keep)
      .def_readonly("n_e", &PruneMask::n_e)
      .def_readonly("layers", &PruneMask::layers)
      .def_property_readonly("strategy", [](const PruneMask& mk) { return std::string(to_string(mk.strategy)); })
      .def("to_json", &PruneMask::to_json)
      .def_static("from_json", &PruneMask::from_json);
  m.def("build_mask",
        [](const std::string& strategy, int keep, int n_e, int n_a, int n_layers, std::optional<std::uint64_t> seed) {
          MaskRequest r;
          r.strategy = parse_prune_strategy(strategy);
          r.keep = keep;
          r.n_e = n_e;
          r.n_a = n_a;
          r.n_layers = n_layers;
          r.seed = seed;
          return build_mask(r);
        },
        py::arg("strategy"), py::arg("keep"), py::arg("n_e"), py::arg("n_a"), py::arg("n_layers"),
        py::arg("seed") = std::nullopt);
  m.def("mask_memory_savings", &mask_memory_savings);

  // ---- communication ----
  m.def("tp_comm_volume", [](int n_d, std::int64_t L, std::int64_t d) {
    ParallelConfig c;
    c.n_devices = n_d;
    c.tokens = L;
    c.d = d;
    return tp_comm_volume(c);
  }, py::arg("n_d"), py::arg("L"), py::arg("d"));
  m.def("ep_comm_volume", [](int n_a, std::int64_t L, std::int64_t d) {
    ParallelConfig c;
    c.n_a = n_a;
    c.tokens = L;
    c.d = d;
    return ep_comm_volume(c);
  }, py::arg("n_a"), py::arg("L"), py::arg("d"));

  // ---- serving simulation ----
  py::enum_<DistinctMode>(m, "DistinctMode")
      .value("expected", DistinctMode::expected)
      .value("sampled", DistinctMode::sampled);

  py::class_<ServingConfig>(m, "ServingConfig")
      .def(py::init<>())
      .def_readwrite("concurrency", &ServingConfig::concurrency)
      .def_readwrite("input_tokens", &ServingConfig::input_tokens)
      .def_readwrite("output_tokens", &ServingConfig::output_tokens)
      .def_readwrite("schedule", &ServingConfig::schedule)
      .def_readwrite("mask", &ServingConfig::mask)
      .def_readwrite("overhead_per_step", &ServingConfig::overhead_per_step)
      .def_readwrite("attention_coeff", &ServingConfig::attention_coeff)
      .def_readwrite("compute_efficiency", &ServingConfig::compute_efficiency)
      .def_readwrite("distinct_mode", &ServingConfig::distinct_mode)
      .def_readwrite("seed", &ServingConfig::seed);

  py::class_<ThroughputReport>(m, "ThroughputReport")
      .def_readonly("tokens_per_second", &ThroughputReport::tokens_per_second)
      .def_readonly("total_tokens", &ThroughputReport::total_tokens)
      .def_readonly("prefill_time_s", &ThroughputReport::prefill_time_s)
      .def_readonly("decode_time_s", &ThroughputReport::decode_time_s)
      .def_readonly("total_time_s", &ThroughputReport::total_time_s)
      .def_readonly("avg_n_a", &ThroughputReport::avg_n_a)
      .def_readonly("n_e_eff", &ThroughputReport::n_e_eff)
      .def_property_readonly("bound_fraction_compute", &ThroughputReport::bound_fraction_compute);

  m.def("simulate_throughput", &simulate_throughput, py::arg("model"), py::arg("hw"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("simulate_many", &simulate_many, py::arg("model"), py::arg("hw"), py::arg("scenarios"),
        py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());
  m.def("knee_concurrency", &knee_concurrency, py::arg("model"), py::arg("hw"), py::arg("template"),
        py::arg("max_concurrency") = 1 << 20, py::call_guard<py::gil_scoped_release>());

  // ---- fixtures and commands ----
  m.def("fixture_text", [](const std::string& id) { return std::string(bundled_fixture_text(parse_fixture_source(id))); });
  m.def("fixture_column", [](const std::string& id_or_path, const std::string& column) {
    return load_fixture(id_or_path).column(column);
  });
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); });
  m.def("aggregate_benchmark_scores", [](const std::vector<double>& scores) {
    const auto a = aggregate_benchmark_scores(scores);
    return py::make_tuple(a.mean, a.delta_vs_baseline);
  });

  py::class_<PropertyResult>(m, "PropertyResult")
      .def_readonly("name", &PropertyResult::name)
      .def_readonly("passed", &PropertyResult::passed)
      .def_readonly("detail", &PropertyResult::detail);
  m.def("verify",
        [](std::uint64_t seed) {
          VerifyOptions opts;
          opts.seed = seed;
          return run_property_suite(opts).results;
        },
        py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());
}
