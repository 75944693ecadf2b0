"""Experiment configuration, runners and the invariant self-check suite."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from wegp import bench
from wegp.bo import BoConfig, optimize as bo_optimize, write_trace
from wegp.errors import ConfigError, WegpError
from wegp.gp import Dataset
from wegp.inference import MapConfig, NutsConfig, PriorSpec
from wegp.model import ModelConfig, fit_model, make_spec
from wegp.space import SearchSpace

log = logging.getLogger(__name__)

SCHEMA_LINE = "# wegp-results v1"
RESULT_COLUMNS = ("experiment", "replication", "size_or_t", "metric", "value", "seconds", "seed", "status")
MODES = ("accuracy", "optimize", "diagnose")
SCHEMES = ("ordinal", "extreme", "ordinal-then-extreme", "onehot")


@dataclass(frozen=True)
class ExternalSpec:
    """Black-box objective served over JSON lines by a child process."""

    command: tuple = ()
    lower: tuple = ()
    upper: tuple = ()
    levels: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment; TOML keys and tables use these field names verbatim."""

    mode: str = "accuracy"
    benchmark: str = "toy"
    basis_scheme: str = "ordinal"
    m_policy: object = "full"
    kernel_family: str = "se"
    nu: float = 2.5
    inference: str = "nuts"
    infer_noise: bool = False
    fixed_noise: float = 0.0
    map_fallback: bool = True
    nuts: NutsConfig = field(default_factory=NutsConfig)
    map: MapConfig = field(default_factory=MapConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)
    train_sizes: tuple | None = None
    size_multipliers: tuple = (10, 20, 30)
    n_test: int = 1000
    T: int = 40
    n_init: int | None = None
    ei_draws: int = 16
    n_cand: int = 500
    method: str = "webo"
    replications: int = 1
    seed: int = 0
    output: str = "results.csv"
    jobs: int | None = None
    plot_script: bool = False
    diagnose: dict = field(default_factory=dict)
    external: ExternalSpec | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.basis_scheme not in SCHEMES:
            raise ConfigError(f"basis_scheme must be one of {SCHEMES}")
        if self.inference not in ("nuts", "map"):
            raise ConfigError("inference must be 'nuts' or 'map'")
        if self.method not in ("webo", "random"):
            raise ConfigError("method must be 'webo' or 'random'")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.benchmark != "external" and self.benchmark.lower() not in bench.REGISTRY:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.benchmark == "external" and self.external is None:
            raise ConfigError("benchmark 'external' needs an [external] table")
        unknown = set(self.diagnose) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown diagnose tolerances: {sorted(unknown)}")

    @property
    def model(self) -> ModelConfig:
        try:
            return ModelConfig(
                scheme=self.basis_scheme, m_policy=self.m_policy, family=self.kernel_family, nu=self.nu,
                inference=self.inference, nuts=self.nuts, map=self.map, prior=self.prior,
                infer_noise=self.infer_noise, fixed_noise=self.fixed_noise, map_fallback=self.map_fallback,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sizes(self, space: SearchSpace) -> tuple:
        if self.train_sizes is not None:
            return tuple(int(n) for n in self.train_sizes)
        return tuple(int(k) * (space.d + space.c) for k in self.size_multipliers)

    def experiment_id(self) -> str:
        tag = self.method if self.mode == "optimize" else self.inference
        return f"{self.mode}:{self.benchmark}:{self.basis_scheme}:{tag}"


_TABLES = {"nuts": NutsConfig, "map": MapConfig, "prior": PriorSpec, "external": ExternalSpec}


def config_from_dict(raw: dict) -> ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            cls = _TABLES[key]
            sub = {f.name for f in dataclasses.fields(cls)}
            bad = set(value) - sub
            if bad:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
            value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            try:
                kwargs[key] = cls(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


class ResultRow(NamedTuple):
    experiment: str
    replication: int
    size_or_t: int
    metric: str
    value: float
    seconds: float
    seed: int
    status: str = "ok"

    def cells(self) -> list:
        return [self.experiment, self.replication, self.size_or_t, self.metric, repr(float(self.value)),
                f"{self.seconds:.6f}", self.seed, self.status]


def write_results(rows, path_or_file):
    """CSV with the schema comment line, then the fixed header."""
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        fh.write(SCHEMA_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(row.cells())
    finally:
        if own:
            fh.close()


def read_results(path) -> list:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ConfigError(f"unrecognized results schema line {first!r}")
        reader = csv.DictReader(fh)
        return [
            ResultRow(r["experiment"], int(r["replication"]), int(r["size_or_t"]), r["metric"],
                      float(r["value"]), float(r["seconds"]), int(r["seed"]), r["status"])
            for r in reader
        ]


def replication_seed(master: int, rep: int, *path: int) -> int:
    """Seed for one replication (and optional sub-stream), independent of other replications."""
    ss = np.random.SeedSequence(master, spawn_key=(rep, *path))
    return int(ss.generate_state(1)[0])


def _resolve(config: ExperimentConfig):
    if config.benchmark == "external":
        ext = config.external
        space = SearchSpace(ext.lower, ext.upper, ext.levels, n_cand=config.n_cand)
        return None, space
    spec = bench.get_benchmark(config.benchmark)
    return spec, spec.space(config.n_cand)


def _wegp_predictor(config: ExperimentConfig, space: SearchSpace):
    def factory(train: Dataset, seed: int):
        spec = make_spec(space.d, space.levels, config.model, np.random.default_rng(seed))
        model = fit_model(train, spec, config.model, seed=seed)
        return model.predict_mean

    return factory


def accuracy_replication(config: ExperimentConfig, rep: int, model_factory: Callable | None = None) -> list:
    """RRMSE rows for every training size of one replication."""
    spec, space = _resolve(config)
    if spec is None:
        raise ConfigError("accuracy mode needs a registered benchmark")
    factory = model_factory or _wegp_predictor(config, space)
    rep_seed = replication_seed(config.seed, rep)
    Xt, Ht = bench.lhs_arrays(space, config.n_test, replication_seed(config.seed, rep, 0), candidates=1)
    yt = spec.evaluate_arrays(Xt, Ht)
    rows = []
    for i, n in enumerate(config.sizes(space)):
        start = time.perf_counter()
        try:
            X, H = bench.lhs_arrays(space, n, replication_seed(config.seed, rep, 1, i))
            train = Dataset(X, H, spec.evaluate_arrays(X, H))
            predictor = factory(train, replication_seed(config.seed, rep, 2, i))
            value, status = bench.rrmse(yt, predictor(Xt, Ht)), "ok"
        except (WegpError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d size %d failed: %s", rep, n, exc)
            value, status = float("nan"), f"error:{type(exc).__name__}"
        rows.append(ResultRow(config.experiment_id(), rep, n, "rrmse", value,
                              time.perf_counter() - start, rep_seed, status))
    return rows


def optimize_replication(config: ExperimentConfig, rep: int) -> tuple:
    """``(result rows, trace records)`` for one optimization replication."""
    spec, space = _resolve(config)
    rep_seed = replication_seed(config.seed, rep)
    bo_cfg = BoConfig(model=config.model, ei_draws=config.ei_draws, seed=rep_seed,
                      method=config.method, n_init=config.n_init)
    exp = config.experiment_id()
    start = time.perf_counter()
    if spec is None:
        ext = config.external
        objective = bench.ExternalObjective(ext.command, space)
    else:
        objective = spec
    try:
        state = bo_optimize(objective, space, config.T, bo_cfg)
        status = "ok"
    except WegpError as exc:
        log.warning("replication %d failed: %s", rep, exc)
        state = getattr(exc, "state", None)
        status = f"error:{type(exc).__name__}"
    finally:
        if spec is None:
            objective.close()
    elapsed = time.perf_counter() - start
    if state is None:
        return [ResultRow(exp, rep, 0, "best_value", float("nan"), elapsed, rep_seed, status)], []
    n_init = len(state.data) - state.t
    init_best = float(np.min(state.data.y[:n_init]))
    rows = [ResultRow(exp, rep, 0, "y_min", init_best, 0.0, rep_seed, "ok")]
    rows += [ResultRow(exp, rep, r.t, "y_min", r.y_min_t, r.seconds, rep_seed, "ok") for r in state.trace]
    to_best = next((r.t for r in state.trace if r.y_min_t == state.y_min), 0)
    if init_best == state.y_min:
        to_best = 0
    rows.append(ResultRow(exp, rep, state.t, "best_value", state.y_min, elapsed, rep_seed, status))
    rows.append(ResultRow(exp, rep, state.t, "iterations_to_best", float(to_best), elapsed, rep_seed, status))
    return rows, [(rep, r) for r in state.trace]


def _jobs(config: ExperimentConfig, jobs: int | None) -> int:
    env = os.environ.get("WEGP_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"WEGP_JOBS must be an integer, got {env!r}") from None
    if jobs is not None:
        return max(1, jobs)
    if config.jobs is not None:
        return max(1, config.jobs)
    return os.cpu_count() or 1


def _map_reps(fn, config, jobs, *extra):
    reps = range(config.replications)
    n = min(_jobs(config, jobs), config.replications)
    if n <= 1:
        return [fn(config, rep, *extra) for rep in reps]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, [config] * len(reps), reps, *[[e] * len(reps) for e in extra]))


def run_accuracy(config: ExperimentConfig, model_factory: Callable | None = None, jobs: int | None = None) -> list:
    """RRMSE rows over all replications and training sizes.

    ``model_factory(train, seed)`` may replace the WEGP fit; it returns a
    callable mapping ``(X, H)`` to predictions.
    """
    if model_factory is not None:
        return [row for rep in range(config.replications) for row in accuracy_replication(config, rep, model_factory)]
    return [row for rows in _map_reps(accuracy_replication, config, jobs) for row in rows]


def run_optimize(config: ExperimentConfig, jobs: int | None = None, trace_out=None) -> list:
    """Incumbent traces plus per-replication summary rows."""
    results = _map_reps(optimize_replication, config, jobs)
    rows = [row for r, _ in results for row in r]
    if trace_out is not None:
        write_trace([rec for _, tr in results for rec in tr], trace_out)
    return rows


def gnuplot_script(csv_path: str, mode: str) -> str:
    metric = "rrmse" if mode == "accuracy" else "y_min"
    xlabel = "training size" if mode == "accuracy" else "iteration"
    return "\n".join([
        "set datafile separator ','",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{metric}'",
        "set key off",
        f"plot '< grep -v \"^#\" {csv_path}' every ::1 using "
        f"(strcol(4) eq '{metric}' ? $3 : 1/0):5 with points pt 7",
        "",
    ])


# ----------------------------------------------------------------------------
# diagnose

DEFAULT_TOLERANCES = {
    "edm_closure": 1e-8,
    "edm_spanning": 1e-6,
    "kernel_psd": 1e-8,
    "lml_gradient": 1e-4,
    "posterior_gradient": 1e-4,
    "nuts_mean": 0.1,
    "nuts_sd": 0.15,
}


class CheckResult(NamedTuple):
    name: str
    passed: bool
    measured: float
    tolerance: float


def _check_edm_closure(rng):
    from wegp.edm import build_basis, validate_edm, weighted_edm

    worst = -np.inf
    for i in range(40):
        n = int(rng.integers(2, 7))
        scheme = ("ordinal", "extreme")[i % 2]
        basis = build_basis(n, None, scheme, rng)
        w = rng.exponential(size=basis.m)
        d2 = weighted_edm(basis, w).d2
        v = validate_edm(d2)
        if not v.is_edm:
            return np.inf
        tr = np.trace(-0.5 * _centering(n) @ d2 @ _centering(n))
        worst = max(worst, -v.min_gram_eigenvalue / max(1.0, tr))
    return max(worst, 0.0)


def _centering(n):
    return np.eye(n) - np.ones((n, n)) / n


def _check_edm_spanning(rng):
    from wegp.edm import Edm, build_extreme_basis, reconstruct_in_cone

    worst = 0.0
    for n in (3, 4, 5):
        for _ in range(10):
            P = rng.normal(size=(n, n - 1))
            target = Edm(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1))
            basis = build_extreme_basis(n, rng, anchor=target)
            res = reconstruct_in_cone(target, basis)
            worst = max(worst, res.residual / np.linalg.norm(target.upper()))
    return worst


def _random_spec(rng, family):
    from wegp.kernel import KernelSpec
    from wegp.edm import build_basis

    d = int(rng.integers(0, 4))
    levels = tuple(int(c) for c in rng.integers(2, 5, size=int(rng.integers(0 if d else 1, 3))))
    bases = [build_basis(c, None, "extreme", rng) for c in levels]
    return KernelSpec(d, levels, bases, family=family, nu=float(rng.choice([0.5, 1.5, 2.5])))


def _random_hp(rng, spec, noise=0.0):
    from wegp.params import HyperParams

    return HyperParams(
        float(np.exp(rng.normal())), rng.uniform(0.05, 1.0, spec.d),
        tuple(rng.exponential(0.5, size=m) for m in spec.m_sizes), noise=noise, mu=float(rng.normal()),
        tau=0.3 if spec.c else None,
    )


def _check_kernel_psd(rng):
    from wegp.kernel import kernel_matrix

    worst = 0.0
    for i in range(20):
        spec = _random_spec(rng, ("se", "matern")[i % 2])
        n = int(rng.integers(2, 31))
        X = rng.uniform(size=(n, spec.d))
        H = np.stack([rng.integers(c, size=n) for c in spec.cat_levels], axis=1) if spec.c else np.zeros((n, 0), int)
        K = kernel_matrix((X, H), spec, _random_hp(rng, spec), jitter=0.0)
        worst = max(worst, -np.linalg.eigvalsh(K).min() / np.trace(K))
    return worst


def _fd_gradient(f, u, h=1e-5):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


def _rel_err(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / scale))


def _gp_instance(rng):
    spec = _random_spec(rng, ("se", "matern")[int(rng.integers(2))])
    n = int(rng.integers(4, 16))
    X = rng.uniform(size=(n, spec.d))
    H = np.stack([rng.integers(c, size=n) for c in spec.cat_levels], axis=1) if spec.c else np.zeros((n, 0), int)
    y = np.sin(3 * X.sum(axis=1)) + (H.sum(axis=1) if spec.c else 0) + 0.1 * rng.normal(size=n)
    return spec, Dataset(X, H, y)


def _check_lml_gradient(rng):
    from wegp.gp import log_marginal_likelihood
    from wegp.params import ParamLayout

    worst = 0.0
    for _ in range(5):
        spec, data = _gp_instance(rng)
        hp = _random_hp(rng, spec, noise=0.01)
        layout = ParamLayout(spec.d, spec.m_sizes, infer_noise=True)
        u = layout.pack(hp)
        f = lambda v: log_marginal_likelihood(data, spec, layout.unpack(v), layout).value
        g = log_marginal_likelihood(data, spec, hp, layout).grad
        worst = max(worst, _rel_err(g, _fd_gradient(f, u)))
    return worst


def _check_posterior_gradient(rng):
    from wegp.inference import LogPosterior

    worst = 0.0
    for _ in range(5):
        spec, data = _gp_instance(rng)
        post = LogPosterior(data, spec, infer_noise=True)
        u = post.initial_point(rng)
        g = post(u).grad
        worst = max(worst, _rel_err(g, _fd_gradient(lambda v: post(v).value, u)))
    return worst


def _check_nuts(rng):
    from wegp.inference import sample_nuts

    def gauss(x):
        return -0.5 * x @ x, -x

    res = sample_nuts(gauss, np.full(5, 3.0), NutsConfig(warmup=500, draws=2000, seed=int(rng.integers(2**31))))
    return float(np.abs(res.samples.mean(0)).max()), float(np.abs(res.samples.std(0) - 1).max())


def run_diagnose(config: ExperimentConfig | None = None) -> list:
    """Run every invariant check once; tolerances may be overridden via ``config.diagnose``."""
    tol = dict(DEFAULT_TOLERANCES)
    seed = 0
    if config is not None:
        tol.update(config.diagnose)
        seed = config.seed
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in (("edm_closure", _check_edm_closure), ("edm_spanning", _check_edm_spanning),
                     ("kernel_psd", _check_kernel_psd), ("lml_gradient", _check_lml_gradient),
                     ("posterior_gradient", _check_posterior_gradient)):
        measured = float(fn(rng))
        out.append(CheckResult(name, measured <= tol[name], measured, tol[name]))
    mean_err, sd_err = _check_nuts(rng)
    out.append(CheckResult("nuts_mean", mean_err <= tol["nuts_mean"], mean_err, tol["nuts_mean"]))
    out.append(CheckResult("nuts_sd", sd_err <= tol["nuts_sd"], sd_err, tol["nuts_sd"]))
    return out


def format_report(checks) -> str:
    buf = io.StringIO()
    for c in checks:
        buf.write(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<20} measured={c.measured:.3e}  tol={c.tolerance:.3e}\n")
    n_fail = sum(not c.passed for c in checks)
    buf.write(f"{len(checks) - n_fail}/{len(checks)} checks passed\n")
    return buf.getvalue()
