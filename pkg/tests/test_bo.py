"""Expected improvement, proposals and the optimization loop."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wegp import model as model_module
from wegp.bench import get_benchmark
from wegp.bo import (
    TRACE_HEADER,
    BoConfig,
    BoState,
    ei_averaged,
    ei_batch,
    ei_single,
    expected_improvement,
    optimize,
    propose,
    run_webo,
    write_trace,
)
from wegp.edm import build_basis
from wegp.errors import ObjectiveError, SamplerHealthError
from wegp.gp import Dataset, fit
from wegp.inference import NutsConfig
from wegp.kernel import KernelSpec, MixedPoint
from wegp.model import ModelConfig, fit_model, make_spec
from wegp.params import HyperParams
from wegp.space import SearchSpace

PHI0 = 0.3989422804014327
FAST = ModelConfig(nuts=NutsConfig(warmup=60, draws=16))
TOY = get_benchmark("toy")


def toy_init(n=6, seed=0):
    space = TOY.space(n_cand=64)
    X, H = space.sample_arrays(n, np.random.default_rng(seed))
    return space, Dataset(X, H, TOY.evaluate_arrays(X, H))


def fitted_draws(seed=0):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(1, (3,), [build_basis(3, None, "ordinal", rng)])
    X = rng.uniform(size=(6, 1))
    H = rng.integers(3, size=(6, 1))
    data = Dataset(X, H, np.sin(5 * X[:, 0]) + H[:, 0])
    hps = [HyperParams(1.0, [t], (rng.uniform(0.1, 1.0, 3),), mu=0.2) for t in (0.3, 0.7)]
    return data, [fit(data, spec, hp) for hp in hps]


class TestExpectedImprovement:
    def test_zero_gap_unit_sd(self):
        assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(PHI0, rel=1e-15)

    def test_degenerate_sd(self):
        assert expected_improvement(0.0, 0.0, 1.0) == 1.0
        assert expected_improvement(2.0, 0.0, 1.0) == 0.0

    def test_closed_form(self):
        m, s, y = 0.3, 0.7, 0.1
        u = (y - m) / s
        cdf = 0.5 * (1 + math.erf(u / math.sqrt(2)))
        pdf = math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
        assert expected_improvement(m, s, y) == pytest.approx((y - m) * cdf + s * pdf, rel=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-10, 10), st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(-10, 10))
    def test_nonnegative_and_monotone_in_sd(self, m, s1, s2, y_min):
        lo, hi = sorted((s1, s2))
        a = float(expected_improvement(m, lo, y_min))
        b = float(expected_improvement(m, hi, y_min))
        assert a >= 0 and b >= 0
        assert b >= a - 1e-12 * max(1.0, abs(a))

    def test_vectorized(self):
        out = expected_improvement(np.zeros(4), np.array([0, 1, 2, 3.0]), 0.0)
        assert out.shape == (4,) and out[0] == 0.0
        np.testing.assert_allclose(out[1:], PHI0 * np.array([1, 2, 3.0]), rtol=1e-14)


class TestAveragedEi:
    def test_single_draw_matches(self):
        data, gps = fitted_draws()
        z = MixedPoint([0.4], (1,))
        assert ei_averaged(z, gps[:1], 0.0) == pytest.approx(ei_single(z, gps[0], 0.0), rel=1e-14)

    def test_repeated_draw(self):
        data, gps = fitted_draws()
        z = MixedPoint([0.9], (2,))
        assert ei_averaged(z, [gps[0]] * 5, 0.1) == pytest.approx(ei_single(z, gps[0], 0.1), rel=1e-14)

    def test_two_draw_mean(self):
        data, gps = fitted_draws()
        z = MixedPoint([0.55], (0,))
        a, b = (ei_single(z, g, 0.3) for g in gps)
        assert ei_averaged(z, gps, 0.3) == pytest.approx((a + b) / 2, rel=1e-14)

    def test_zero_at_incumbent(self):
        data, gps = fitted_draws()
        i = int(np.argmin(data.y))
        z = data.points[i]
        # only jitter-level variance remains at a noiseless training point
        assert ei_averaged(z, gps, float(data.y[i])) <= 1e-3 * np.ptp(data.y)

    def test_empty_draws(self):
        with pytest.raises(ValueError):
            ei_averaged(MixedPoint([0.5], (0,)), [], 0.0)

    def test_model_in_raw_units(self):
        space, data = toy_init()
        spec = make_spec(space.d, space.levels, FAST, np.random.default_rng(0))
        fitted = fit_model(data, spec, FAST, seed=0, n_draws=4)
        X, H = data.X, data.H
        np.testing.assert_allclose(fitted.predict_mean(X, H), data.y, atol=1e-4 * np.ptp(data.y))
        assert ei_batch(fitted, X, H, float(data.y.min())).max() <= 1e-3 * np.ptp(data.y)


class TestPropose:
    def test_single_candidate(self):
        data, gps = fitted_draws()
        space = SearchSpace((0.0,), (1.0,), (3,), (("a", "b", "c"),), n_cand=1)
        z = propose(gps, 0.0, space, np.random.default_rng(3))
        X, H = space.sample_arrays(1, np.random.default_rng(3))
        assert z == MixedPoint(X[0], H[0])

    def test_deterministic(self):
        data, gps = fitted_draws()
        space = SearchSpace((0.0,), (1.0,), (3,), (("a", "b", "c"),), n_cand=50)
        a = propose(gps, 0.0, space, np.random.default_rng(9))
        b = propose(gps, 0.0, space, np.random.default_rng(9))
        assert a == b

    def test_maximizes_over_candidates(self):
        data, gps = fitted_draws()
        space = SearchSpace((0.0,), (1.0,), (3,), (("a", "b", "c"),), n_cand=40)
        z = propose(gps, 0.5, space, np.random.default_rng(4))
        X, H = space.sample_arrays(40, np.random.default_rng(4))
        ei = ei_batch(gps, X, H, 0.5)
        assert ei_averaged(z, gps, 0.5) == pytest.approx(ei.max(), rel=1e-12)


class TestRunWebo:
    def test_zero_iterations(self):
        space, data = toy_init()
        state = run_webo(TOY, space, data, 0, BoConfig(FAST))
        assert state.n_evals == len(data) and state.trace == []
        assert state.y_min == data.y.min()

    def test_budget_and_monotone_trace(self):
        space, data = toy_init()
        state = run_webo(TOY, space, data, 4, BoConfig(FAST, ei_draws=4, seed=1))
        assert state.n_evals == len(data) + 4
        assert [r.t for r in state.trace] == [1, 2, 3, 4]
        best = [r.y_min_t for r in state.trace]
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert best[-1] == min(state.data.y)

    def test_replay(self):
        space, data = toy_init()
        a = run_webo(TOY, space, data, 3, BoConfig(FAST, ei_draws=4, seed=2))
        b = run_webo(TOY, space, data, 3, BoConfig(FAST, ei_draws=4, seed=2))
        np.testing.assert_array_equal(a.data.X, b.data.X)
        np.testing.assert_array_equal(a.data.y, b.data.y)

    def test_constant_objective(self):
        space, data = toy_init()
        data = data.with_y(np.full(len(data), 3.0))
        state = run_webo(lambda z: 3.0, space, data, 2, BoConfig(ModelConfig(inference="map")))
        assert state.y_min == 3.0 and state.n_evals == len(data) + 2

    def test_objective_error_keeps_state(self):
        space, data = toy_init()
        calls = []

        def flaky(z):
            calls.append(z)
            if len(calls) == 3:
                raise RuntimeError("simulator crashed")
            return TOY(z)

        with pytest.raises(ObjectiveError) as info:
            run_webo(flaky, space, data, 5, BoConfig(FAST, method="random"))
        assert info.value.state.n_evals == len(data) + 2
        assert len(info.value.state.trace) == 2

    def test_random_baseline(self):
        space, data = toy_init()
        state = run_webo(TOY, space, data, 10, BoConfig(method="random", seed=5))
        assert state.n_evals == len(data) + 10
        assert not any(r.fallback_used for r in state.trace)

    def test_map_fallback_flagged(self, monkeypatch):
        def unhealthy(*args, **kwargs):
            raise SamplerHealthError("too many divergences", None)

        monkeypatch.setattr(model_module, "nuts_sample", unhealthy)
        space, data = toy_init()
        state = run_webo(TOY, space, data, 2, BoConfig(FAST, ei_draws=2))
        assert all(r.fallback_used for r in state.trace)

    def test_fallback_disabled_propagates(self, monkeypatch):
        def unhealthy(*args, **kwargs):
            raise SamplerHealthError("too many divergences", None)

        monkeypatch.setattr(model_module, "nuts_sample", unhealthy)
        space, data = toy_init()
        cfg = BoConfig(ModelConfig(nuts=FAST.nuts, map_fallback=False))
        with pytest.raises(SamplerHealthError):
            run_webo(TOY, space, data, 1, cfg)

    def test_negative_budget(self):
        space, data = toy_init()
        with pytest.raises(ValueError):
            run_webo(TOY, space, data, -1)

    def test_optimize_default_init(self):
        space = TOY.space(n_cand=32)
        state = optimize(TOY, space, 0, BoConfig(FAST))
        assert state.n_evals == max(5, 2 * (space.d + space.c))


class TestState:
    def test_incumbent_tracking(self):
        data = Dataset([[0.1], [0.2]], np.zeros((2, 0), int), [2.0, 1.0])
        state = BoState.from_data(data)
        assert state.y_min == 1.0 and state.z_min == data.points[1]
        state.record(MixedPoint([0.3]), 1.5, 0.0, False)
        assert state.y_min == 1.0
        state.record(MixedPoint([0.4]), 0.5, 0.0, False)
        assert state.y_min == 0.5 and state.z_min == MixedPoint([0.4])


def test_write_trace_header():
    space, data = toy_init()
    state = run_webo(TOY, space, data, 2, BoConfig(method="random"))
    buf = io.StringIO()
    write_trace([(0, r) for r in state.trace], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == 3
    assert float(lines[2].split(",")[3]) == state.y_min
