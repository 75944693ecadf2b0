"""Posterior sampling and MAP estimation of GP hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wegp.errors import OptimizationError
from wegp.gp import Dataset
from wegp.inference.nuts import NutsConfig, NutsDiagnostics, sample_nuts
from wegp.inference.posterior import LogPosterior, PriorSpec
from wegp.kernel import KernelSpec
from wegp.params import HyperParams, ParamLayout


@dataclass
class PosteriorDraws:
    """Hyperparameter draws from one chain (or a single MAP point)."""

    draws: list
    diagnostics: NutsDiagnostics | None = None
    samples: np.ndarray | None = field(default=None, repr=False)
    layout: ParamLayout | None = None

    def __post_init__(self):
        if len(self.draws) < 1:
            raise ValueError("need at least one draw")

    def __len__(self):
        return len(self.draws)

    def __iter__(self):
        return iter(self.draws)

    def thin(self, count: int) -> "PosteriorDraws":
        """Keep ``count`` draws at an even stride through the chain."""
        n = len(self.draws)
        if count >= n:
            return self
        idx = np.floor(np.arange(count) * n / count).astype(int)
        samples = self.samples[idx] if self.samples is not None else None
        return PosteriorDraws([self.draws[i] for i in idx], self.diagnostics, samples, self.layout)

    def stack(self, name: str) -> np.ndarray:
        """Array of one hyperparameter across draws (``weights`` gives a flat concat)."""
        if name == "weights":
            return np.array([np.concatenate(h.weights) for h in self.draws])
        return np.array([getattr(h, name) for h in self.draws])


def _start(post: LogPosterior, rng, tries=50):
    for _ in range(tries):
        u = post.initial_point(rng)
        if np.isfinite(post(u).value):
            return u
    raise OptimizationError("could not find a starting point with finite log posterior")


def nuts_sample(data: Dataset, spec: KernelSpec, prior: PriorSpec | None = None,
                config: NutsConfig = NutsConfig(), infer_noise: bool = False,
                fixed_noise: float = 0.0) -> PosteriorDraws:
    """Sample GP hyperparameters with NUTS.

    Deterministic given ``config.seed``.  Raises ``SamplerHealthError`` when
    more than 10% of post-warmup transitions diverge.
    """
    post = LogPosterior(data, spec, prior, infer_noise, fixed_noise)
    rng = np.random.default_rng([config.seed, 0x5EED])
    u0 = _start(post, rng)
    res = sample_nuts(post, u0, config)
    draws = [post.layout.unpack(u) for u in res.samples]
    return PosteriorDraws(draws, res.diagnostics, res.samples, post.layout)


@dataclass(frozen=True)
class MapConfig:
    restarts: int = 5
    max_iters: int = 500
    seed: int = 0
    gtol: float = 1e-6


class MaximizeResult(tuple):
    __slots__ = ()

    def __new__(cls, x, value, grad, iters):
        return super().__new__(cls, (x, value, grad, iters))

    x = property(lambda s: s[0])
    value = property(lambda s: s[1])
    grad = property(lambda s: s[2])
    iters = property(lambda s: s[3])


def maximize(log_density, x0, max_iters: int = 500, gtol: float = 1e-6) -> MaximizeResult:
    """Quasi-Newton ascent (BFGS directions) with Armijo backtracking.

    Stops when ``||grad||_inf <= gtol``, when no ascent step is found, or
    after ``max_iters`` iterations.
    """
    x = np.array(x0, dtype=float)
    f, g = log_density(x)
    if not np.isfinite(f):
        raise OptimizationError("non-finite log density at the starting point")
    n = x.size
    Hinv = np.eye(n)
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) <= gtol:
            break
        d = Hinv @ g
        slope = g @ d
        if slope <= 0:
            Hinv = np.eye(n)
            d, slope = g, g @ g
        t = 1.0
        # cap the first trial step so a huge direction does not leave the domain
        t = min(1.0, 5.0 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(60):
            x_new = x + t * d
            f_new, g_new = log_density(x_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if np.allclose(Hinv, np.eye(n)):
                break
            Hinv = np.eye(n)
            continue
        s = x_new - x
        yv = g - g_new  # gradient change of the negated objective
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, np.asarray(g_new, dtype=float)
    return MaximizeResult(x, float(f), g, it)


def map_estimate(data: Dataset, spec: KernelSpec, prior: PriorSpec | None = None,
                 config: MapConfig = MapConfig(), infer_noise: bool = False,
                 fixed_noise: float = 0.0) -> HyperParams:
    """Best local maximum of the unconstrained log posterior over prior-drawn restarts."""
    post = LogPosterior(data, spec, prior, infer_noise, fixed_noise)
    best = map_search(post, config)
    return post.layout.unpack(best.x)


def map_search(post: LogPosterior, config: MapConfig = MapConfig()) -> MaximizeResult:
    rng = np.random.default_rng([config.seed, 0x3A9])
    best = None
    for _ in range(config.restarts):
        u0 = post.prior_draw(rng)
        if not np.isfinite(post(u0).value):
            continue
        try:
            res = maximize(post, u0, config.max_iters, config.gtol)
        except OptimizationError:
            continue
        if best is None or res.value > best.value:
            best = res
    if best is None:
        raise OptimizationError(f"all {config.restarts} MAP restarts failed")
    return best
