import math

import pytest

import moeperf


def test_ffn_golden_values():
    assert moeperf.ffn_io(2048, 10944, 1) == 67_265_920
    assert moeperf.ffn_flops(2048, 10944, 128) == 17_213_423_616
    assert moeperf.arithmetic_intensity(2048, 10944, 1) == pytest.approx(1.9992, abs=1e-3)


def test_presets_and_knee():
    model = moeperf.load_model("v2-lite")
    hw = moeperf.load_hardware("a800")
    assert model.n_moe_layers == 26
    knee = moeperf.knee_length(model.d, model.d_s, hw)
    assert 135 <= knee <= 185
    assert moeperf.check_reduction_bound(moeperf.load_model("v3")).computed == pytest.approx(0.4706, abs=5e-5)


def test_bad_config_raises_value_error():
    with pytest.raises(ValueError):
        moeperf.load_model("no-such-model")
    with pytest.raises(moeperf.ValidationError):
        moeperf.build_schedule(moeperf.SkipTuple(2, 6, 2, 27), 26, 64)


def test_routing_examples():
    cfg = moeperf.RouterConfig()
    cfg.n_e, cfg.n_a = 4, 2
    d = moeperf.route([2.0, 1.0, 0.5, -1.0], cfg)
    assert d.selected == [0, 1]
    assert d.weights[0] == pytest.approx(0.7311, abs=1e-4)
    r = moeperf.route_restricted([2.0, 1.0, 0.5, -1.0], cfg, [1, 2, 3])
    assert r.selected == [1, 2]


def test_distinct_experts():
    closed = moeperf.expected_distinct_experts(64, 6, 32)
    assert closed == pytest.approx(64 * (1 - (58 / 64) ** 32))
    sample = moeperf.sample_distinct_experts(64, 6, 32, 5000, 0)
    assert abs(sample.mean - closed) <= 3 * sample.std_error


def test_schedule_and_mask():
    s = moeperf.build_schedule(moeperf.SkipTuple(2, 6, 2, 11), 26, 64)
    assert s.shape == "peak"
    assert s.average_active == pytest.approx(102 / 26)
    mask = moeperf.build_mask("even", 32, 64, 6, 26)
    assert mask.layers[0] == list(range(0, 64, 2))
    assert moeperf.PruneMask.from_json(mask.to_json()).layers == mask.layers


def test_serving_speedup_shape():
    model = moeperf.load_model("v2-lite")
    hw = moeperf.load_hardware("a800")

    def tput(c, n_a):
        sc = moeperf.ServingConfig()
        sc.concurrency = c
        sc.schedule = moeperf.uniform_schedule(n_a, 26)
        return moeperf.simulate_throughput(model, hw, sc).tokens_per_second

    speedups = {c: tput(c, 2) / tput(c, 6) for c in (4, 64, 512)}
    assert speedups[64] <= min(speedups[4], speedups[512])
    assert 1.05 <= speedups[512] <= 1.35


def test_fixtures_and_spearman():
    na6 = moeperf.fixture_column("table9", "na6")
    assert len(na6) == 14
    assert moeperf.spearman([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)
    mean, delta = moeperf.aggregate_benchmark_scores([36.0] * 6)
    assert math.isclose(mean, 36.0) and delta == 0.0


def test_property_suite_passes():
    results = moeperf.verify(seed=3)
    assert results and all(r.passed for r in results), [r.name for r in results if not r.passed]
