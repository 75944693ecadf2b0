"""Benchmark responses, encodings, metric and designs."""

import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wegp.bench import (
    BEAM_INERTIA,
    BEAM_SHAPES,
    BOREHOLE_LOWER,
    BOREHOLE_UPPER,
    REGISTRY,
    ExternalObjective,
    ackley,
    ackley4c,
    beam_bending,
    borehole,
    borehole_raw,
    categorize,
    evaluate,
    func2c,
    func3c,
    get_benchmark,
    lhs_arrays,
    lhs_design,
    lhs_unit,
    otl,
    otl_raw,
    piston,
    rescaled,
    rrmse,
)
from wegp.errors import ConfigError, DomainError, UndefinedMetricError, ValidationError
from wegp.kernel import MixedPoint
from wegp.space import SearchSpace


class TestEngineeringGoldens:
    """Reference values from an independent evaluation of the closed forms."""

    def test_borehole_midpoint(self):
        mid = (np.array(BOREHOLE_LOWER) + np.array(BOREHOLE_UPPER)) / 2
        assert borehole(mid) == pytest.approx(70.87291263681894, rel=1e-10)

    def test_piston_equal_temperatures(self):
        v = (45.0, 0.0125, 0.006, 3000.0, 100000.0, 350.0, 350.0)
        assert piston(v, check_bounds=False) == pytest.approx(0.47123043019966593, rel=1e-10)

    def test_otl_midpoint(self):
        v = (100.0, 47.5, 1.75, 1.85, 0.725, 40.0)
        assert otl(v) == pytest.approx(5.331482373098234, rel=1e-10)

    def test_otl_small_rb2_limit(self):
        rc2, rf, beta = 0.725, 1.75, 40.0
        v = (100.0, 1e-9, rf, 1.85, rc2, beta)
        expected = 0.74 * beta * (rc2 + 9) / (beta * (rc2 + 9) + rf)
        expected += 11.35 * rf / (beta * (rc2 + 9) + rf)
        expected += 0.74 * rf * beta * (rc2 + 9) / ((beta * (rc2 + 9) + rf) * 1.85)
        assert otl(v, check_bounds=False) == pytest.approx(expected, rel=1e-6)

    def test_beam_square(self):
        assert beam_bending(15.0, 1.5, "square") == pytest.approx(2.667733760170735, rel=1e-10)

    def test_beam_shape_ratio(self):
        y_i = beam_bending(12.0, 1.2, "i-shape")
        y_hc = beam_bending(12.0, 1.2, "hollow-circular")
        ratio = BEAM_INERTIA[BEAM_SHAPES.index("hollow-circular")] / BEAM_INERTIA[BEAM_SHAPES.index("i-shape")]
        assert y_i / y_hc == pytest.approx(ratio, rel=1e-12)

    def test_beam_width_quartic(self):
        assert beam_bending(14.0, 1.0, "circular") / beam_bending(14.0, 2.0, "circular") == pytest.approx(16.0, rel=1e-12)

    @pytest.mark.parametrize("fn, lower", [
        (borehole, BOREHOLE_LOWER),
        (otl, (50.0, 25.0, 0.5, 1.2, 0.25, 30.0)),
    ])
    def test_out_of_range_raises(self, fn, lower):
        v = np.array(lower, dtype=float)
        v[0] *= 0.5
        with pytest.raises(DomainError):
            fn(v)

    def test_non_finite_raises(self):
        mid = (np.array(BOREHOLE_LOWER) + np.array(BOREHOLE_UPPER)) / 2
        mid[2] = np.nan
        with pytest.raises(DomainError):
            borehole(mid)


class TestSynthetic:
    def test_camel_minimum(self):
        x = (0.0898 / 3.0, -0.7126 / 2.0)
        assert rescaled("cam", x) == pytest.approx(-1.0316284, abs=1e-6)

    def test_ackley_zero_at_origin(self):
        assert ackley(np.zeros(7)) == pytest.approx(0.0, abs=1e-14)

    def test_ackley4c_golden(self):
        assert ackley4c(np.zeros(3), (1, 1, 1, 1)) == pytest.approx(3.3075320236399652, rel=1e-12)

    def test_ackley4c_minimum(self):
        assert ackley4c(np.zeros(3), (0, 0, 0, 0)) == pytest.approx(0.0, abs=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=7, max_size=7), st.permutations(range(7)))
    def test_ackley_permutation_symmetry(self, v, perm):
        v = np.array(v)
        assert ackley(v[list(perm)]) == pytest.approx(ackley(v), rel=1e-12, abs=1e-12)

    def test_func2c_duplicate_levels(self):
        x = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
        for h1 in range(3):
            a, b, c = (func2c(x, np.tile([h1, h2], (20, 1))) for h2 in (2, 3, 4))
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(a, c)

    def test_func3c_adds_scaled_beale(self):
        x = np.random.default_rng(1).uniform(-1, 1, size=(20, 2))
        h = np.tile([1, 0, 2], (20, 1))
        diff = func3c(x, h) - func2c(x, h[:, :2])
        np.testing.assert_allclose(diff, 2.0 * rescaled("bea", x), rtol=1e-12)

    def test_level_out_of_range(self):
        with pytest.raises(IndexError):
            func2c(np.zeros(2), (3, 0))

    def test_box_enforced(self):
        with pytest.raises(DomainError):
            func2c(np.array([1.5, 0.0]), (0, 0))


class TestRegistry:
    @pytest.mark.parametrize("name, d, c", [
        ("otl", 4, 2), ("piston", 5, 2), ("borehole", 6, 2), ("beam", 2, 1),
        ("func2c", 2, 2), ("func3c", 2, 3), ("ackley4c", 3, 4), ("toy", 1, 1),
    ])
    def test_dimensions(self, name, d, c):
        spec = get_benchmark(name)
        assert (spec.d, spec.c) == (d, c)

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            get_benchmark("nope")

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_finite_on_random_inputs(self, name):
        spec = get_benchmark(name)
        space = spec.space()
        X, H = space.sample_arrays(10_000, np.random.default_rng(0))
        y = spec.evaluate_arrays(X, H)
        assert y.shape == (10_000,) and np.all(np.isfinite(y))

    def test_call_matches_arrays(self):
        spec = get_benchmark("borehole")
        X, H = spec.space().sample_arrays(5, np.random.default_rng(2))
        batch = spec.evaluate_arrays(X, H)
        single = [spec(MixedPoint(x, h)) for x, h in zip(X, H)]
        np.testing.assert_allclose(single, batch, rtol=1e-15)

    def test_to_config_lists_levels(self):
        cfg = get_benchmark("beam").to_config()
        assert cfg["variables"][2]["labels"] == list(BEAM_SHAPES)


class TestCategorize:
    def test_borehole_rw_levels(self):
        spec = categorize(borehole_raw(), ["rw"])
        rw = next(v for v in spec.variables if v.name == "rw")
        np.testing.assert_allclose(rw.levels, (0.05, 0.08333333333333334, 0.11666666666666667, 0.15), rtol=1e-12)

    def test_otl_beta_levels(self):
        spec = categorize(otl_raw(), ["beta"])
        beta = next(v for v in spec.variables if v.name == "beta")
        np.testing.assert_allclose(beta.levels, (30.0, 36.666666666666664, 43.333333333333336, 50.0), rtol=1e-12)

    def test_unknown_variable(self):
        with pytest.raises(ConfigError):
            categorize(otl_raw(), ["zz"])

    def test_degenerate_range_warns(self, caplog):
        from dataclasses import replace
        raw = otl_raw()
        flat = replace(raw, variables=tuple(replace(v, upper=v.lower) if v.name == "Rf" else v for v in raw.variables))
        spec = categorize(flat, ["Rf"])
        assert "empty range" in caplog.text
        rf = next(v for v in spec.variables if v.name == "Rf")
        assert len(set(rf.levels)) == 1

    def test_encoding_uses_level_value(self):
        spec = get_benchmark("borehole")
        raw = spec.raw_inputs(np.full((1, 6), 0.5), [[0, 3]])
        names = [v.name for v in spec.variables]
        assert raw[0, names.index("rw")] == pytest.approx(0.15)
        assert raw[0, names.index("Hl")] == pytest.approx(700.0)


class TestRrmse:
    def test_constant_prediction(self):
        assert rrmse([0, 1, 2], [0, 0, 0]) == pytest.approx(1.5811388300841898, rel=1e-14)

    def test_mean_prediction_is_one(self):
        y = np.array([1.0, 4.0, -2.0, 0.5])
        assert rrmse(y, np.full(4, y.mean())) == pytest.approx(1.0, rel=1e-14)

    def test_perfect(self):
        assert rrmse([1, 2, 3], [1, 2, 3]) == 0.0

    def test_constant_truth(self):
        with pytest.raises(UndefinedMetricError):
            rrmse([2, 2, 2], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            rrmse([1, 2], [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 100), st.floats(-100, 100))
    def test_affine_invariance(self, seed, a, b):
        rng = np.random.default_rng(seed)
        y, p = rng.normal(size=20), rng.normal(size=20)
        assert rrmse(a * y + b, a * p + b) == pytest.approx(rrmse(y, p), rel=1e-9)

    def test_report(self):
        rep = evaluate([0, 1, 2], [0, 1, 3])
        assert rep.n_test == 3
        np.testing.assert_array_equal(rep.residuals, [0, 0, -1])


class TestLhs:
    @pytest.mark.parametrize("n, d", [(1, 3), (7, 2), (20, 5)])
    def test_one_point_per_stratum(self, n, d):
        X = lhs_unit(n, d, np.random.default_rng(0), candidates=10)
        for j in range(d):
            assert sorted(np.floor(X[:, j] * n).astype(int)) == list(range(n))

    def test_deterministic(self):
        space = get_benchmark("otl").space()
        a = lhs_arrays(space, 12, 5)
        b = lhs_arrays(space, 12, 5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_design_points(self):
        space = SearchSpace((0.0,), (1.0,), (3,), (("a", "b", "c"),))
        pts = lhs_design(space, 4, 0)
        assert len(pts) == 4 and all(0 <= p.h[0] < 3 for p in pts)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            lhs_unit(0, 2, np.random.default_rng(0))


class TestExternalObjective:
    def test_round_trip(self, tmp_path):
        script = tmp_path / "obj.py"
        script.write_text(
            "import json, sys\n"
            "for line in sys.stdin:\n"
            "    r = json.loads(line)\n"
            "    print(json.dumps({'y': sum(r['x']) + 10 * r['h'][0]}), flush=True)\n"
        )
        space = SearchSpace((0.0, 10.0), (1.0, 20.0), (2,), (("a", "b"),))
        with ExternalObjective([sys.executable, str(script)], space) as obj:
            y = obj(MixedPoint([0.5, 0.5], (1,)))
        assert y == pytest.approx(0.5 + 15.0 + 10.0)

    def test_closed_output(self):
        space = SearchSpace((0.0,), (1.0,), (), ())
        obj = ExternalObjective([sys.executable, "-c", "pass"], space)
        with pytest.raises((RuntimeError, BrokenPipeError)):
            obj(MixedPoint([0.5]))
        obj.proc.wait()


def test_borehole_radius_term_sign():
    # increasing the well radius increases the flow rate
    lo = (np.array(BOREHOLE_LOWER) + np.array(BOREHOLE_UPPER)) / 2
    hi = lo.copy()
    hi[4] = 0.14
    lo[4] = 0.06
    assert borehole(hi) > borehole(lo)
    assert math.isfinite(borehole(hi))
