"""Benchmark responses, mixed encodings, designs and the RRMSE metric.

Response functions take raw inputs in the variable order of their
:class:`BenchmarkSpec` and broadcast over a leading batch axis.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from wegp.errors import ConfigError, DomainError, UndefinedMetricError, ValidationError
from wegp.kernel import MixedPoint
from wegp.space import SearchSpace

log = logging.getLogger(__name__)

_BOUND_RTOL = 1e-12


def _check(v, lower, upper, name):
    v = np.asarray(v, dtype=float)
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    slack = _BOUND_RTOL * np.maximum(np.abs(lo), np.abs(hi))
    bad = (v < lo - slack) | (v > hi + slack) | ~np.isfinite(v)
    if np.any(bad):
        raise DomainError(f"{name}: input outside its declared range")


# ----------------------------------------------------------------------------
# engineering functions

OTL_VARS = ("Rb1", "Rb2", "Rf", "Rc1", "Rc2", "beta")
OTL_LOWER = (50.0, 25.0, 0.5, 1.2, 0.25, 30.0)
OTL_UPPER = (150.0, 70.0, 3.0, 2.5, 1.20, 50.0)

PISTON_VARS = ("M", "S", "V0", "k", "P0", "T", "T0")
PISTON_LOWER = (30.0, 0.005, 0.002, 1000.0, 90000.0, 290.0, 340.0)
PISTON_UPPER = (60.0, 0.02, 0.01, 5000.0, 110000.0, 296.0, 360.0)

BOREHOLE_VARS = ("Tu", "Hu", "Hl", "r", "rw", "Tl", "L", "Kw")
BOREHOLE_LOWER = (63070.0, 990.0, 700.0, 100.0, 0.05, 63.1, 1120.0, 9855.0)
BOREHOLE_UPPER = (115600.0, 1110.0, 820.0, 50000.0, 0.15, 116.0, 1680.0, 12045.0)


def otl_vb1(rb1, rb2):
    return 12.0 * rb2 / (rb1 + rb2)


def otl(inputs, check_bounds: bool = True):
    """Output-transformerless push-pull circuit midpoint voltage."""
    v = np.asarray(inputs, dtype=float)
    if check_bounds:
        _check(v, OTL_LOWER, OTL_UPPER, "otl")
    rb1, rb2, rf, rc1, rc2, beta = np.moveaxis(v, -1, 0)
    vb1 = otl_vb1(rb1, rb2)
    bc = beta * (rc2 + 9.0)
    den = bc + rf
    return (vb1 + 0.74) * bc / den + 11.35 * rf / den + 0.74 * rf * bc / (den * rc1)


def piston(inputs, check_bounds: bool = True):
    """Piston cycle time in seconds."""
    v = np.asarray(inputs, dtype=float)
    if check_bounds:
        _check(v, PISTON_LOWER, PISTON_UPPER, "piston")
    m, s, v0, k, p0, t, t0 = np.moveaxis(v, -1, 0)
    a = p0 * s + 19.62 * m - k * v0 / s
    vol = s / (2.0 * k) * (np.sqrt(a**2 + 4.0 * k * p0 * v0 * t / t0) - a)
    return 2.0 * np.pi * np.sqrt(m / (k + s**2 * p0 * v0 * t / (t0 * vol**2)))


def borehole(inputs, check_bounds: bool = True):
    """Water flow rate through a borehole; ``r0`` is the well radius ``rw``."""
    v = np.asarray(inputs, dtype=float)
    if check_bounds:
        _check(v, BOREHOLE_LOWER, BOREHOLE_UPPER, "borehole")
    tu, hu, hl, r, rw, tl, length, kw = np.moveaxis(v, -1, 0)
    lr = np.log(r / rw)
    return 2.0 * np.pi * tu * (hu - hl) / (lr * (1.0 + 2.0 * length * tu / (lr * rw**2 * kw) + tu / tl))


BEAM_SHAPES = ("circular", "square", "i-shape", "hollow-square", "hollow-circular")
BEAM_INERTIA = (0.0491, 0.0833, 0.0449, 0.0633, 0.0373)
BEAM_P = 600.0
BEAM_E = 600e3
BEAM_LOWER = (10.0, 1.0)
BEAM_UPPER = (20.0, 2.0)


def _beam_inertia(shape):
    if isinstance(shape, str):
        key = shape.lower().replace(" ", "-").replace("_", "-")
        if key not in BEAM_SHAPES:
            raise DomainError(f"unknown beam shape {shape!r}")
        return BEAM_INERTIA[BEAM_SHAPES.index(key)]
    return np.asarray(shape, dtype=float)


def beam_bending(length, width, shape, check_bounds: bool = True):
    """Cantilever tip deflection ``P L^3 / (3 E I(t) w^4)``.

    ``shape`` is a label from ``BEAM_SHAPES`` or a normalized inertia value.
    """
    if check_bounds:
        _check(length, BEAM_LOWER[0], BEAM_UPPER[0], "beam length")
        _check(width, BEAM_LOWER[1], BEAM_UPPER[1], "beam width")
    inertia = _beam_inertia(shape)
    return BEAM_P * np.asarray(length, dtype=float) ** 3 / (3.0 * BEAM_E * inertia * np.asarray(width, dtype=float) ** 4)


def _beam_response(v, check_bounds=True):
    v = np.asarray(v, dtype=float)
    return beam_bending(v[..., 0], v[..., 1], v[..., 2], check_bounds)


# ----------------------------------------------------------------------------
# synthetic optimization functions (2-d components on [-1, 1]^2)

def beale(x1, x2):
    return (1.5 - x1 + x1 * x2) ** 2 + (2.25 - x1 + x1 * x2**2) ** 2 + (2.625 - x1 + x1 * x2**3) ** 2


def camel(x1, x2):
    return (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2 + x1 * x2 + (-4.0 + 4.0 * x2**2) * x2**2


def rosenbrock(x1, x2):
    return 100.0 * (x2 - x1**2) ** 2 + (1.0 - x1) ** 2


# canonical half-widths; every domain is centred at the origin
_HALF_WIDTH = {"bea": (4.5, 4.5), "cam": (3.0, 2.0), "ros": (2.048, 2.048)}
_CANON = {"bea": beale, "cam": camel, "ros": rosenbrock}


def rescaled(name: str, x):
    """Evaluate a 2-d component with ``x`` in ``[-1, 1]^2`` mapped to its canonical box."""
    x = np.asarray(x, dtype=float)
    a, b = _HALF_WIDTH[name]
    return _CANON[name](a * x[..., 0], b * x[..., 1])


FUNC_H1 = (("ros", 1.0), ("cam", 1.0), ("bea", 1.0))
FUNC_H2 = (("ros", 1.0), ("cam", 1.0), ("bea", 1.0), ("bea", 1.0), ("bea", 1.0))
FUNC_H3 = (("cam", 5.0), ("ros", 2.0), ("bea", 2.0), ("bea", 3.0))


def _term(table, idx, x):
    idx = np.asarray(idx, dtype=int)
    if np.any((idx < 0) | (idx >= len(table))):
        raise IndexError("categorical level out of range")
    vals = np.stack([coef * rescaled(name, x) for name, coef in table], axis=0)
    return np.take_along_axis(vals, idx[None, ...], axis=0)[0] if vals.ndim > 1 else vals[idx]


def _check_unit_box(x, name):
    _check(x, -1.0, 1.0, name)


def func2c(x, h, check_bounds: bool = True):
    """``f_{h1}(x) + f_{h2}(x)`` with ``h1`` in 3 levels and ``h2`` in 5."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=int)
    if check_bounds:
        _check_unit_box(x, "func2c")
    return _term(FUNC_H1, h[..., 0], x) + _term(FUNC_H2, h[..., 1], x)


def func3c(x, h, check_bounds: bool = True):
    """``func2c`` plus a scaled component chosen by a 4-level ``h3``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=int)
    return func2c(x, h[..., :2], check_bounds) + _term(FUNC_H3, h[..., 2], x)


ACKLEY_LEVELS = (0.0, 0.5, 1.0)


def ackley(v, a=20.0, b=0.2, c=2.0 * np.pi):
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    s1 = np.sqrt(np.sum(v**2, axis=-1) / n)
    s2 = np.sum(np.cos(c * v), axis=-1) / n
    return -a * np.exp(-b * s1) - np.exp(s2) + a + math.e


def ackley4c(x, h, check_bounds: bool = True):
    """Ackley on the 7-vector formed by the four level values followed by ``x``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=int)
    if check_bounds:
        _check_unit_box(x, "ackley4c")
    if np.any((h < 0) | (h >= 3)):
        raise IndexError("categorical level out of range")
    return ackley(np.concatenate([np.asarray(ACKLEY_LEVELS)[h], x], axis=-1))


# ----------------------------------------------------------------------------
# benchmark specifications

@dataclass(frozen=True)
class Variable:
    """One raw input.  ``levels`` is set for categorical variables."""

    name: str
    lower: float
    upper: float
    levels: tuple | None = None
    labels: tuple | None = None

    @property
    def categorical(self) -> bool:
        return self.levels is not None


@dataclass(frozen=True)
class BenchmarkSpec:
    """A named benchmark: raw variables in argument order and a batch response.

    ``response`` receives an ``(N, len(variables))`` array of raw values.
    """

    name: str
    variables: tuple
    response: Callable = field(compare=False, repr=False)
    optimum: float | None = None

    @property
    def continuous(self) -> list:
        return [v for v in self.variables if not v.categorical]

    @property
    def categorical(self) -> list:
        return [v for v in self.variables if v.categorical]

    @property
    def d(self) -> int:
        return len(self.continuous)

    @property
    def c(self) -> int:
        return len(self.categorical)

    def space(self, n_cand: int = 500) -> SearchSpace:
        cont, cat = self.continuous, self.categorical
        return SearchSpace(
            tuple(v.lower for v in cont), tuple(v.upper for v in cont),
            tuple(len(v.levels) for v in cat),
            tuple(v.labels or tuple(str(x) for x in v.levels) for v in cat),
            n_cand,
        )

    def raw_inputs(self, X, H) -> np.ndarray:
        """Assemble raw inputs from unit-box ``X`` and level indices ``H``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = np.asarray(H, dtype=int).reshape(len(X), -1)
        raw = np.empty((len(X), len(self.variables)))
        ic = ik = 0
        for j, v in enumerate(self.variables):
            if v.categorical:
                idx = H[:, ik]
                if np.any((idx < 0) | (idx >= len(v.levels))):
                    raise IndexError(f"level index out of range for {v.name}")
                raw[:, j] = np.asarray(v.levels, dtype=float)[idx]
                ik += 1
            else:
                raw[:, j] = v.lower + X[:, ic] * (v.upper - v.lower)
                ic += 1
        return raw

    def evaluate_arrays(self, X, H) -> np.ndarray:
        return np.asarray(self.response(self.raw_inputs(X, H)), dtype=float).reshape(-1)

    def __call__(self, z: MixedPoint) -> float:
        return float(self.evaluate_arrays(z.x[None, :], np.asarray(z.h, dtype=int)[None, :])[0])

    def to_config(self) -> dict:
        """Structured description for reproducibility records."""
        out = {"name": self.name, "variables": []}
        for v in self.variables:
            entry = {"name": v.name, "lower": v.lower, "upper": v.upper}
            if v.categorical:
                entry["levels"] = list(v.levels)
                if v.labels:
                    entry["labels"] = list(v.labels)
            out["variables"].append(entry)
        if self.optimum is not None:
            out["optimum"] = self.optimum
        return out


def _raw_spec(name, names, lower, upper, fn) -> BenchmarkSpec:
    vars_ = tuple(Variable(n, lo, hi) for n, lo, hi in zip(names, lower, upper))
    return BenchmarkSpec(name, vars_, fn)


def categorize(spec: BenchmarkSpec, which: Sequence[str], n_levels: int = 4) -> BenchmarkSpec:
    """Discretize named continuous variables into equally spaced levels.

    Level ``i`` sits at ``min + i (max - min) / (n_levels - 1)``.
    """
    names = {v.name for v in spec.variables}
    unknown = [w for w in which if w not in names]
    if unknown:
        raise ConfigError(f"unknown variable(s) for {spec.name}: {unknown}")
    out = []
    for v in spec.variables:
        if v.name in which and not v.categorical:
            if v.lower == v.upper:
                log.warning("variable %s has an empty range; its levels coincide", v.name)
            step = (v.upper - v.lower) / (n_levels - 1)
            levels = tuple(v.lower + i * step for i in range(n_levels))
            v = replace(v, levels=levels)
        out.append(v)
    return replace(spec, variables=tuple(out))


def otl_raw() -> BenchmarkSpec:
    return _raw_spec("otl", OTL_VARS, OTL_LOWER, OTL_UPPER, otl)


def piston_raw() -> BenchmarkSpec:
    return _raw_spec("piston", PISTON_VARS, PISTON_LOWER, PISTON_UPPER, piston)


def borehole_raw() -> BenchmarkSpec:
    return _raw_spec("borehole", BOREHOLE_VARS, BOREHOLE_LOWER, BOREHOLE_UPPER, borehole)


CATEGORICAL_VARS = {"otl": ("Rf", "beta"), "piston": ("k", "P0"), "borehole": ("Hl", "rw")}


def beam_spec() -> BenchmarkSpec:
    vars_ = (
        Variable("L", BEAM_LOWER[0], BEAM_UPPER[0]),
        Variable("w", BEAM_LOWER[1], BEAM_UPPER[1]),
        Variable("shape", min(BEAM_INERTIA), max(BEAM_INERTIA), BEAM_INERTIA, BEAM_SHAPES),
    )
    return BenchmarkSpec("beam", vars_, _beam_response)


def _synthetic(name, levels, fn, optimum=None) -> BenchmarkSpec:
    cats = tuple(
        Variable(f"h{k + 1}", 0.0, float(n - 1), tuple(float(i) for i in range(n)))
        for k, n in enumerate(levels)
    )
    d = 3 if name == "ackley4c" else 2
    conts = tuple(Variable(f"x{j + 1}", -1.0, 1.0) for j in range(d))
    c = len(levels)

    def response(v):
        v = np.asarray(v, dtype=float)
        return fn(v[..., c:], np.rint(v[..., :c]).astype(int))

    return BenchmarkSpec(name, cats + conts, response, optimum)


def toy_spec() -> BenchmarkSpec:
    """Cheap smooth 1-d function with a 3-level shift, for smoke tests."""

    def response(v):
        v = np.asarray(v, dtype=float)
        return np.sin(2.0 * np.pi * v[..., 0]) + 0.5 * v[..., 1]

    vars_ = (Variable("x", 0.0, 1.0), Variable("g", 0.0, 2.0, (0.0, 1.0, 2.0)))
    return BenchmarkSpec("toy", vars_, response)


REGISTRY = {
    "otl": lambda: categorize(otl_raw(), CATEGORICAL_VARS["otl"]),
    "piston": lambda: categorize(piston_raw(), CATEGORICAL_VARS["piston"]),
    "borehole": lambda: categorize(borehole_raw(), CATEGORICAL_VARS["borehole"]),
    "beam": beam_spec,
    "func2c": lambda: _synthetic("func2c", (3, 5), func2c),
    "func3c": lambda: _synthetic("func3c", (3, 5, 4), func3c),
    "ackley4c": lambda: _synthetic("ackley4c", (3, 3, 3, 3), ackley4c, optimum=0.0),
    "toy": toy_spec,
}


def get_benchmark(name: str) -> BenchmarkSpec:
    try:
        return REGISTRY[name.lower()]()
    except KeyError:
        raise ConfigError(f"unknown benchmark {name!r}; known: {sorted(REGISTRY)}") from None


# ----------------------------------------------------------------------------
# metrics and designs

@dataclass(frozen=True)
class EvalReport:
    rrmse: float
    n_test: int
    residuals: np.ndarray = field(repr=False)


def rrmse(truth, pred) -> float:
    """``sqrt(sum (y - yhat)^2 / sum (y - mean y)^2)``."""
    y = np.asarray(truth, dtype=float).ravel()
    p = np.asarray(pred, dtype=float).ravel()
    if y.shape != p.shape:
        raise ValidationError("truth and pred differ in length")
    if len(y) < 2:
        raise ValidationError("need at least two points")
    den = np.sum((y - y.mean()) ** 2)
    if den == 0:
        raise UndefinedMetricError("RRMSE is undefined for constant truth")
    return float(np.sqrt(np.sum((y - p) ** 2) / den))


def evaluate(truth, pred) -> EvalReport:
    truth = np.asarray(truth, dtype=float).ravel()
    res = truth - np.asarray(pred, dtype=float).ravel()
    return EvalReport(rrmse(truth, pred), len(truth), res)


def lhs_unit(n: int, d: int, rng: np.random.Generator, candidates: int = 100) -> np.ndarray:
    """Maximin Latin hypercube in ``[0, 1]^d`` chosen among random candidates."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    best, best_score = None, -np.inf
    for _ in range(max(1, candidates)):
        strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1) if d else np.empty((n, 0))
        X = (strata + rng.uniform(size=(n, d))) / n
        score = pdist(X).min() if n > 1 and d > 0 else 0.0
        if score > best_score:
            best, best_score = X, score
    return best


def lhs_arrays(space: SearchSpace, n: int, seed, candidates: int = 100):
    """LHS on the continuous dims, uniform categorical levels; returns ``(X, H)``."""
    rng = np.random.default_rng(seed)
    X = lhs_unit(n, space.d, rng, candidates)
    H = np.empty((n, space.c), dtype=int)
    for k, ck in enumerate(space.levels):
        H[:, k] = rng.integers(ck, size=n)
    return X, H


def lhs_design(space: SearchSpace, n: int, seed, candidates: int = 100) -> list:
    X, H = lhs_arrays(space, n, seed, candidates)
    return [MixedPoint(x, h) for x, h in zip(X, H)]


# ----------------------------------------------------------------------------
# external objectives

class ExternalObjective:
    """Objective served by a child process speaking JSON lines.

    Each query writes ``{"x": [...], "h": [...]}`` (raw continuous values and
    level indices) and reads back one line ``{"y": value}``.
    """

    def __init__(self, command: Sequence[str], space: SearchSpace):
        self.space = space
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
        )

    def __call__(self, z: MixedPoint) -> float:
        record = {"x": self.space.to_raw(z.x).tolist(), "h": list(z.h)}
        self.proc.stdin.write(json.dumps(record) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("external objective closed its output")
        return float(json.loads(line)["y"])

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
