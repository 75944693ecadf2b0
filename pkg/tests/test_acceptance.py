"""Acceptance suite: one marked test per criterion, summarized at session end.

Criteria 7, 8 and 10 run the desk-scale experiments and take roughly an hour
on one core.
"""

import time

import numpy as np
import pytest

from wegp.edm import (
    BaseEdmSet,
    Edm,
    Provenance,
    build_basis,
    build_extreme_basis,
    gram_matrix,
    reconstruct_in_cone,
    validate_edm,
    weighted_edm,
)
from wegp.experiments import ExperimentConfig, run_accuracy, run_optimize
from wegp.gp import Dataset, fit, log_marginal_likelihood, predict_arrays
from wegp.inference import LogPosterior, NutsConfig, nuts_sample, sample_nuts
from wegp.kernel import KernelSpec, kernel_matrix
from wegp.model import standardize
from wegp.params import HyperParams, ParamLayout

ACCURACY_BENCHMARKS = ("borehole", "otl", "piston", "beam")
BO_BENCHMARKS = ("func2c", "func3c", "ackley4c")
REPS = 5
SEED = 2024


def accuracy_config(name):
    return ExperimentConfig(
        mode="accuracy", benchmark=name, replications=REPS, seed=SEED,
        nuts=NutsConfig(warmup=300, draws=128),
    )


def bo_config(name, method):
    from wegp.bench import get_benchmark

    spec = get_benchmark(name)
    return ExperimentConfig(
        mode="optimize", benchmark=name, method=method, T=40, n_init=2 * (spec.d + spec.c),
        replications=REPS, seed=SEED, ei_draws=16, nuts=NutsConfig(warmup=200, draws=64),
    )


def run_accuracy_suite():
    start = time.perf_counter()
    rows = {name: run_accuracy(accuracy_config(name)) for name in ACCURACY_BENCHMARKS}
    return rows, time.perf_counter() - start


def run_bo_suite():
    start = time.perf_counter()
    rows = {(name, method): run_optimize(bo_config(name, method))
            for name in BO_BENCHMARKS for method in ("webo", "random")}
    return rows, time.perf_counter() - start


@pytest.fixture(scope="session")
def accuracy_suite():
    return run_accuracy_suite()


@pytest.fixture(scope="session")
def bo_suite():
    return run_bo_suite()


def metric_values(rows):
    return [(r.experiment, r.replication, r.size_or_t, r.metric, r.value, r.status) for r in rows]


def random_design(rng, spec, n):
    X = rng.uniform(size=(n, spec.d))
    H = np.stack([rng.integers(c, size=n) for c in spec.cat_levels], axis=1) if spec.c else np.zeros((n, 0), int)
    return X, H


def random_spec(rng, family, c_min=0):
    d = int(rng.integers(0 if c_min else 1, 4))
    levels = tuple(int(c) for c in rng.integers(2, 6, size=int(rng.integers(max(c_min, 0 if d else 1), 4))))
    bases = [build_basis(c, None, ("ordinal", "extreme")[int(rng.integers(2))], rng) for c in levels]
    return KernelSpec(d, levels, bases, family=family, nu=float(rng.choice([0.5, 1.5, 2.5])))


def random_hp(rng, spec, noise=0.0):
    return HyperParams(
        float(np.exp(rng.normal())), rng.uniform(0.05, 1.0, spec.d),
        tuple(rng.exponential(0.5, size=m) for m in spec.m_sizes),
        noise=noise, mu=float(rng.normal()), tau=0.3 if spec.c else None,
    )


def fd_gradient(f, u, h=1e-3):
    # five-point central stencil; the two-point rule's roundoff exceeds the tolerance on tiny components
    return np.array([(f(u - 2 * e) - 8 * f(u - e) + 8 * f(u + e) - f(u + 2 * e)) / (12 * h)
                     for e in np.eye(u.size) * h])


def rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


@pytest.mark.acceptance(1, "EDM cone closure")
def test_criterion_01_cone_closure(record_property):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for i in range(200):
        n = 2 + i % 5
        basis = build_basis(n, None, ("ordinal", "extreme")[(i // 5) % 2], rng)
        d2 = weighted_edm(basis, rng.exponential(size=basis.m) * (rng.uniform(size=basis.m) < 0.7)).d2
        g = gram_matrix(d2)
        bound = -1e-8 * max(1.0, float(np.trace(g)))
        assert validate_edm(d2).is_edm
        assert np.linalg.eigvalsh(g).min() >= bound
    elapsed = time.perf_counter() - start
    record_property("detail", f"{elapsed:.2f}s")
    assert elapsed < 5


@pytest.mark.acceptance(2, "cone spanning by NNLS")
def test_criterion_02_cone_spanning(record_property):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for n in (3, 4, 5):
        for _ in range(50):
            P = rng.normal(size=(n, int(rng.integers(1, n))))
            target = Edm(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1))
            basis = build_extreme_basis(n, rng, anchor=target)
            res = reconstruct_in_cone(target, basis)
            worst = max(worst, res.residual / np.linalg.norm(target.upper()))
    elapsed = time.perf_counter() - start
    record_property("detail", f"worst {worst:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-6
    assert elapsed < 10


@pytest.mark.acceptance(3, "kernel PSD")
def test_criterion_03_kernel_psd(record_property):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        spec = random_spec(rng, ("se", "matern")[i % 2])
        X, H = random_design(rng, spec, int(rng.integers(2, 31)))
        K = kernel_matrix((X, H), spec, random_hp(rng, spec), jitter=0.0)
        worst = max(worst, -np.linalg.eigvalsh(K).min() / np.trace(K))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 20


@pytest.mark.acceptance(4, "gradient fidelity")
def test_criterion_04_gradients(record_property):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    lml_worst = post_worst = 0.0
    for i in range(20):
        spec = random_spec(rng, ("se", "matern")[i % 2])
        X, H = random_design(rng, spec, int(rng.integers(4, 16)))
        y = np.sin(3 * X.sum(axis=1)) + H.sum(axis=1) + 0.1 * rng.normal(size=len(X))
        data = Dataset(X, H, y)
        layout = ParamLayout(spec.d, spec.m_sizes, infer_noise=True)
        hp = random_hp(rng, spec, noise=0.01)
        u = layout.pack(hp)
        g = log_marginal_likelihood(data, spec, hp, layout).grad
        fd = fd_gradient(lambda v: log_marginal_likelihood(data, spec, layout.unpack(v), layout).value, u)
        lml_worst = max(lml_worst, rel_error(g, fd))

        post = LogPosterior(data, spec, infer_noise=True)
        v = post.initial_point(rng) + 0.3 * rng.normal(size=post.dim)
        post_worst = max(post_worst, rel_error(post(v).grad, fd_gradient(lambda w: post(w).value, v)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"lml {lml_worst:.1e}, posterior {post_worst:.1e}, {elapsed:.1f}s")
    assert lml_worst <= 1e-4
    assert post_worst <= 1e-4
    assert elapsed < 30


@pytest.mark.acceptance(5, "GP interpolation")
def test_criterion_05_interpolation(record_property):
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, ("se", "matern")[seed % 2], c_min=1)
        X, H = random_design(rng, spec, 15)
        y = np.cos(4 * X.sum(axis=1)) + 0.7 * H[:, 0] - 0.2 * H.sum(axis=1)
        gp = fit(Dataset(X, H, y), spec, random_hp(rng, spec))
        mean, _ = predict_arrays(gp, X, H)
        errors.append(np.max(np.abs(mean - y)) / max(np.ptp(y), 1e-12))
        Xt, Ht = random_design(rng, spec, 200)
        _, var = predict_arrays(gp, Xt, Ht)
        assert np.all(var >= 0)
    over = [i for i, e in enumerate(errors) if e > 1e-5]
    record_property("detail", f"worst {max(errors):.1e} of range, seeds over tolerance {over}")
    assert not over


@pytest.mark.acceptance(6, "NUTS calibration")
def test_criterion_06_nuts(record_property):
    start = time.perf_counter()
    errs = []
    for seed in range(3):
        res = sample_nuts(lambda x: (-0.5 * x @ x, -x), np.full(5, 3.0), NutsConfig(warmup=500, draws=2000, seed=seed))
        errs.append((np.abs(res.samples.mean(0)).max(), np.abs(res.samples.std(0) - 1).max()))
    elapsed = time.perf_counter() - start
    record_property("detail", "; ".join(f"mean {m:.3f} sd {s:.3f}" for m, s in errs) + f", {elapsed:.1f}s")
    assert all(m <= 0.1 and s <= 0.15 for m, s in errs)
    assert elapsed < 60


@pytest.mark.acceptance(7, "RRMSE learning curve")
def test_criterion_07_learning_curve(accuracy_suite, record_property):
    rows, elapsed = accuracy_suite
    notes, ok = [], True
    for name, bench_rows in rows.items():
        assert all(r.status == "ok" for r in bench_rows), name
        sizes = sorted({r.size_or_t for r in bench_rows})
        means = [np.mean([r.value for r in bench_rows if r.size_or_t == n]) for n in sizes]
        notes.append(f"{name} " + "/".join(f"{m:.3g}" for m in means))
        ok &= all(m < 1 for m in means) and means[-1] < means[0]
    record_property("detail", ", ".join(notes) + f", {elapsed / 60:.1f} min")
    assert ok
    assert elapsed < 30 * 60


@pytest.mark.acceptance(8, "WEBO vs random search")
def test_criterion_08_webo_vs_random(bo_suite, record_property):
    rows, elapsed = bo_suite
    wins, notes = 0, []
    for name in BO_BENCHMARKS:
        final = {}
        for method in ("webo", "random"):
            run = rows[(name, method)]
            assert all(r.status == "ok" for r in run), (name, method)
            final[method] = np.mean([r.value for r in run if r.metric == "best_value"])
        for rep in range(REPS):
            trace = [r.value for r in sorted(rows[(name, "webo")], key=lambda r: r.size_or_t)
                     if r.replication == rep and r.metric == "y_min"]
            assert len(trace) == 41
            assert all(b <= a for a, b in zip(trace, trace[1:])), (name, rep)
        wins += final["webo"] <= final["random"]
        notes.append(f"{name} {final['webo']:.3g} vs {final['random']:.3g}")
    record_property("detail", ", ".join(notes) + f", {elapsed / 60:.1f} min")
    assert wins >= 2
    assert elapsed < 45 * 60


def cut_basis(c):
    """Extreme rays that split one level off from the rest."""
    rays = np.eye(c)
    bases = tuple(Edm((r[:, None] - r[None, :]) ** 2) for r in rays)
    return BaseEdmSet(bases, tuple(Provenance("extreme", tuple(r)) for r in rays))


@pytest.mark.acceptance(9, "shrinkage of inactive weights")
def test_criterion_09_shrinkage(record_property):
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        levels = (3, 3)
        spec = KernelSpec(1, levels, [cut_basis(c) for c in levels])
        n = 40
        X = rng.uniform(size=(n, 1))
        H = np.stack([rng.integers(c, size=n) for c in levels], axis=1)
        truth = HyperParams(1.0, [0.8], tuple(np.array([0.0, 0.0, 3.0]) for _ in levels))
        K = kernel_matrix((X, H), spec, truth, jitter=0.0) + 1e-4 * np.eye(n)
        y, _, _ = standardize(np.linalg.cholesky(K) @ rng.normal(size=n))
        draws = nuts_sample(Dataset(X, H, y), spec, config=NutsConfig(seed=seed), infer_noise=True)
        worst = 0.0
        for k in range(len(levels)):
            med = np.median([hp.weights[k] for hp in draws], axis=0)
            worst = max(worst, med[:2].max() / med[2])
        ratios.append(worst)
    record_property("detail", "ratios " + " ".join(f"{r:.1e}" for r in ratios))
    assert sum(r < 0.1 for r in ratios) >= 4


@pytest.mark.acceptance(10, "determinism of experiment reruns")
def test_criterion_10_determinism(accuracy_suite, bo_suite, record_property):
    acc_again, _ = run_accuracy_suite()
    bo_again, _ = run_bo_suite()
    for name, rows in accuracy_suite[0].items():
        assert metric_values(acc_again[name]) == metric_values(rows), name
    for key, rows in bo_suite[0].items():
        assert metric_values(bo_again[key]) == metric_values(rows), key
    record_property("detail", f"{sum(map(len, acc_again.values())) + sum(map(len, bo_again.values()))} rows identical")
