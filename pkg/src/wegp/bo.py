"""Posterior-averaged expected improvement and the WEBO minimization loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from wegp.errors import ObjectiveError, ValidationError
from wegp.gp import Dataset, FittedGp, predict, predict_arrays
from wegp.kernel import MixedPoint
from wegp.model import FittedModel, ModelConfig, fit_model, make_spec
from wegp.space import SearchSpace

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
S_FLOOR = 1e-12

TRACE_HEADER = ("replication", "t", "y_t", "y_min_t", "seconds", "fallback_used")


def expected_improvement(mean, sd, y_min):
    """Minimization EI, vectorized over ``mean`` and ``sd``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    gap = y_min - mean
    small = sd <= S_FLOOR
    safe = np.where(small, 1.0, sd)
    u = gap / safe
    ei = gap * ndtr(u) + safe * _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return np.where(small, np.maximum(gap, 0.0), np.maximum(ei, 0.0))


def ei_single(z: MixedPoint, gp: FittedGp, y_min: float) -> float:
    """EI at ``z`` under one fitted GP."""
    m, v = predict(gp, z)
    return float(expected_improvement(m, np.sqrt(v), y_min))


def _draw_moments(fitted, X, H):
    if isinstance(fitted, FittedModel):
        return fitted.predict_draws(X, H)
    means, vars_ = zip(*(predict_arrays(gp, X, H) for gp in fitted))
    return np.array(means), np.array(vars_)


def ei_batch(fitted, X, H, y_min) -> np.ndarray:
    """Draw-averaged EI at each row of ``(X, H)``.

    ``fitted`` is a :class:`FittedModel` (raw response units) or a sequence of
    :class:`FittedGp`.
    """
    means, vars_ = _draw_moments(fitted, X, H)
    return expected_improvement(means, np.sqrt(vars_), y_min).mean(axis=0)


def ei_averaged(z: MixedPoint, fitted, y_min: float) -> float:
    """Arithmetic mean of EI over posterior draws."""
    if not isinstance(fitted, FittedModel) and len(fitted) < 1:
        raise ValidationError("need at least one fitted draw")
    X = z.x[None, :]
    H = np.asarray(z.h, dtype=int).reshape(1, -1)
    return float(ei_batch(fitted, X, H, y_min)[0])


def propose(fitted, y_min: float, space: SearchSpace, rng: np.random.Generator) -> MixedPoint:
    """Best of ``space.n_cand`` uniform candidates by averaged EI; ties go to the lowest index."""
    X, H = space.sample_arrays(space.n_cand, rng)
    ei = ei_batch(fitted, X, H, y_min)
    i = int(np.argmax(ei))
    return MixedPoint(X[i], H[i])


@dataclass(frozen=True)
class TraceRecord:
    t: int
    y_t: float
    y_min_t: float
    seconds: float
    fallback_used: bool = False


@dataclass
class BoState:
    """Data gathered so far, the incumbent and the per-iteration trace."""

    data: Dataset
    z_min: MixedPoint
    y_min: float
    t: int = 0
    trace: list = field(default_factory=list)

    @classmethod
    def from_data(cls, data: Dataset) -> "BoState":
        i = int(np.argmin(data.y))
        return cls(data, data.points[i], float(data.y[i]))

    @property
    def n_evals(self) -> int:
        return len(self.data)

    def record(self, z: MixedPoint, y: float, seconds: float, fallback: bool):
        self.data = self.data.append(z, y)
        self.t += 1
        if y < self.y_min:
            self.z_min, self.y_min = z, float(y)
        self.trace.append(TraceRecord(self.t, float(y), self.y_min, seconds, fallback))


@dataclass(frozen=True)
class BoConfig:
    """Settings of one optimization run.

    ``method`` is ``"webo"`` or ``"random"`` (uniform proposals, same accounting).
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    ei_draws: int = 16
    seed: int = 0
    method: str = "webo"
    n_init: int | None = None

    def __post_init__(self):
        if self.method not in ("webo", "random"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.ei_draws < 1:
            raise ValueError("ei_draws must be >= 1")


def _iteration_seeds(seed: int, t: int):
    ss = np.random.SeedSequence(seed, spawn_key=(t,))
    fit_seed, cand_seed = ss.generate_state(2)
    return int(fit_seed), np.random.default_rng(int(cand_seed))


def run_webo(objective: Callable[[MixedPoint], float], space: SearchSpace, init: Dataset, T: int,
             config: BoConfig = BoConfig()) -> BoState:
    """Run ``T`` iterations of fit, propose, evaluate, append.

    A MAP fallback (when NUTS is unhealthy) is flagged in the trace. If the
    objective raises, :class:`ObjectiveError` carries the partial state.
    """
    if T < 0:
        raise ValidationError("T must be >= 0")
    state = BoState.from_data(init)
    spec = None
    if config.method == "webo":
        spec = make_spec(space.d, space.levels, config.model, np.random.default_rng([config.seed, 0xB45]))
    for t in range(1, T + 1):
        start = time.perf_counter()
        fit_seed, rng = _iteration_seeds(config.seed, t)
        fallback = False
        if config.method == "random":
            z = space.sample(1, rng)[0]
        else:
            model = fit_model(state.data, spec, config.model, seed=fit_seed, n_draws=config.ei_draws)
            fallback = model.fallback_used
            z = propose(model, state.y_min, space, rng)
        try:
            y = float(objective(z))
        except Exception as exc:
            raise ObjectiveError(f"objective failed at iteration {t}: {exc}", state) from exc
        state.record(z, y, time.perf_counter() - start, fallback)
    return state


def initial_design(space: SearchSpace, n: int | None, seed) -> list:
    """LHS initial design of size ``n`` (default ``max(5, 2 (d + c))``)."""
    from wegp.bench import lhs_design

    n = max(5, 2 * (space.d + space.c)) if n is None else n
    return lhs_design(space, n, seed)


def optimize(objective: Callable[[MixedPoint], float], space: SearchSpace, T: int,
             config: BoConfig = BoConfig()) -> BoState:
    """Evaluate an initial design, then run :func:`run_webo` for ``T`` iterations."""
    points = initial_design(space, config.n_init, [config.seed, 0x1417])
    y = [float(objective(z)) for z in points]
    return run_webo(objective, space, Dataset.from_points(points, y), T, config)


def write_trace(rows: Sequence[tuple], path_or_file):
    """Write ``(replication, TraceRecord)`` pairs as CSV."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for rep, rec in rows:
            w.writerow([rep, rec.t, repr(rec.y_t), repr(rec.y_min_t), f"{rec.seconds:.6f}", int(rec.fallback_used)])
    finally:
        if own:
            fh.close()
