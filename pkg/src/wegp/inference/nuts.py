"""No-U-Turn Sampler with multinomial trajectory sampling.

Single chain, diagonal metric.  Warmup follows the usual windowed scheme:
a fast step-size-only buffer, slow windows of doubling length that estimate
the metric from sample variances, and a terminal step-size buffer.  Step
size is tuned by dual averaging toward ``target_accept``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from wegp.errors import SamplerHealthError

MAX_ENERGY_ERROR = 1000.0


@dataclass(frozen=True)
class NutsConfig:
    warmup: int = 500
    draws: int = 256
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    max_divergence_fraction: float = 0.1

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class NutsDiagnostics:
    divergences: int
    mean_accept: float
    step_size: float
    tree_depths: np.ndarray
    n_leapfrog: int
    inv_metric: np.ndarray = field(repr=False)
    warmup_divergences: int = 0

    def depth_histogram(self) -> dict:
        vals, counts = np.unique(self.tree_depths, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    CSV_HEADER = "divergences,step_size,mean_accept,n_leapfrog,depth_histogram"

    def to_csv_row(self) -> str:
        hist = ";".join(f"{k}:{v}" for k, v in self.depth_histogram().items())
        return f"{self.divergences},{self.step_size!r},{self.mean_accept!r},{self.n_leapfrog},{hist}"


class NutsResult(NamedTuple):
    samples: np.ndarray  # (draws, dim)
    log_density: np.ndarray  # (draws,)
    diagnostics: NutsDiagnostics


class _Tree:
    __slots__ = (
        "q_left", "p_left", "g_left", "q_right", "p_right", "g_right",
        "ps_left", "ps_right", "rho", "log_w", "q_prop", "lp_prop", "g_prop",
        "turning", "divergent", "sum_accept", "n_leapfrog",
    )


class _Sampler:
    def __init__(self, log_density, dim, rng, max_depth):
        self.f = log_density
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(dim)

    def evaluate(self, q):
        lp, g = self.f(q)
        if not np.isfinite(lp):
            return -np.inf, np.zeros(self.dim)
        return float(lp), np.asarray(g, dtype=float)

    def kinetic(self, p):
        return 0.5 * float(np.dot(p, self.inv_metric * p))

    def leapfrog(self, q, p, g, eps):
        p = p + 0.5 * eps * g
        q = q + eps * self.inv_metric * p
        lp, g = self.evaluate(q)
        p = p + 0.5 * eps * g
        return q, p, lp, g

    def leaf(self, q, p, g, eps, H0):
        q, p, lp, g = self.leapfrog(q, p, g, eps)
        t = _Tree()
        H = -lp + self.kinetic(p) if np.isfinite(lp) else np.inf
        delta = H - H0
        if not np.isfinite(delta):
            delta = np.inf
        t.divergent = bool(delta > MAX_ENERGY_ERROR)
        t.turning = False
        t.log_w = -delta if not t.divergent else -np.inf
        t.sum_accept = math.exp(min(0.0, -delta)) if np.isfinite(delta) else 0.0
        t.n_leapfrog = 1
        t.q_left = t.q_right = t.q_prop = q
        t.p_left = t.p_right = p
        t.g_left = t.g_right = t.g_prop = g
        t.lp_prop = lp
        t.ps_left = t.ps_right = self.inv_metric * p
        t.rho = p.copy()
        return t

    def build(self, tree_edge, direction, depth, eps, H0):
        q, p, g = tree_edge
        if depth == 0:
            return self.leaf(q, p, g, direction * eps, H0)
        first = self.build(tree_edge, direction, depth - 1, eps, H0)
        if first.turning or first.divergent:
            return first
        edge = (first.q_right, first.p_right, first.g_right) if direction > 0 else (
            first.q_left, first.p_left, first.g_left)
        second = self.build(edge, direction, depth - 1, eps, H0)
        first.sum_accept += second.sum_accept
        first.n_leapfrog += second.n_leapfrog
        if second.turning or second.divergent:
            first.turning = second.turning
            first.divergent = second.divergent
            return first
        log_w = np.logaddexp(first.log_w, second.log_w)
        if second.log_w > -np.inf and self.rng.uniform() < math.exp(second.log_w - log_w):
            first.q_prop, first.lp_prop, first.g_prop = second.q_prop, second.lp_prop, second.g_prop
        first.log_w = log_w
        self.merge_edges(first, second, direction)
        return first

    def merge_edges(self, tree, new, direction):
        """Attach ``new`` on side ``direction`` of ``tree`` and update ``turning``."""
        left, right = (tree, new) if direction > 0 else (new, tree)
        rho_left, rho_right = left.rho, right.rho
        p_left_last, ps_left_last = left.p_right, left.ps_right
        p_right_first, ps_right_first = right.p_left, right.ps_left
        ps_outer_left, ps_outer_right = left.ps_left, right.ps_right
        q_l, p_l, g_l = left.q_left, left.p_left, left.g_left
        q_r, p_r, g_r = right.q_right, right.p_right, right.g_right
        rho = rho_left + rho_right
        turning = _turning(rho, ps_outer_left, ps_outer_right)
        if not turning:
            # extra checks across the two halves
            turning = _turning(rho_left + p_right_first, ps_outer_left, ps_right_first) or _turning(
                rho_right + p_left_last, ps_left_last, ps_outer_right)
        tree.q_left, tree.p_left, tree.g_left, tree.ps_left = q_l, p_l, g_l, ps_outer_left
        tree.q_right, tree.p_right, tree.g_right, tree.ps_right = q_r, p_r, g_r, ps_outer_right
        tree.rho = rho
        tree.turning = turning

    def transition(self, q, lp, g, eps):
        p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
        H0 = -lp + self.kinetic(p)
        tree = _Tree()
        tree.q_left = tree.q_right = tree.q_prop = q
        tree.p_left = tree.p_right = p
        tree.g_left = tree.g_right = tree.g_prop = g
        tree.lp_prop = lp
        tree.ps_left = tree.ps_right = self.inv_metric * p
        tree.rho = p.copy()
        tree.log_w = 0.0
        tree.turning = tree.divergent = False
        sum_accept, n_leapfrog, depth, divergent = 0.0, 0, 0, False
        while depth < self.max_depth:
            direction = 1 if self.rng.uniform() < 0.5 else -1
            edge = (tree.q_right, tree.p_right, tree.g_right) if direction > 0 else (
                tree.q_left, tree.p_left, tree.g_left)
            new = self.build(edge, direction, depth, eps, H0)
            sum_accept += new.sum_accept
            n_leapfrog += new.n_leapfrog
            depth += 1
            if new.divergent:
                divergent = True
                break
            if new.turning:
                break
            if new.log_w > -np.inf and self.rng.uniform() < math.exp(min(0.0, new.log_w - tree.log_w)):
                tree.q_prop, tree.lp_prop, tree.g_prop = new.q_prop, new.lp_prop, new.g_prop
            tree.log_w = np.logaddexp(tree.log_w, new.log_w)
            self.merge_edges(tree, new, direction)
            if tree.turning:
                break
        accept = sum_accept / max(n_leapfrog, 1)
        return tree.q_prop, tree.lp_prop, tree.g_prop, accept, depth, divergent, n_leapfrog

    def reasonable_step(self, q, lp, g, eps=1.0):
        p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
        H0 = -lp + self.kinetic(p)

        def log_ratio(e):
            _, p1, lp1, _ = self.leapfrog(q, p, g, e)
            if not np.isfinite(lp1):
                return -np.inf
            return H0 - (-lp1 + self.kinetic(p1))

        lr = log_ratio(eps)
        direction = 1.0 if lr > math.log(0.5) else -1.0
        for _ in range(60):
            if direction > 0 and not lr > math.log(0.5):
                break
            if direction < 0 and not lr < math.log(0.5):
                break
            eps *= 2.0**direction
            if eps < 1e-10 or eps > 1e7:
                break
            lr = log_ratio(eps)
        return eps


class _DualAveraging:
    def __init__(self, eps, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.hbar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0
        self.log_eps = math.log(eps)

    def update(self, accept):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.hbar = (1 - eta) * self.hbar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        x = self.t ** (-self.kappa)
        self.log_eps_bar = x * self.log_eps + (1 - x) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _turning(rho, ps_minus, ps_plus):
    return float(np.dot(rho, ps_minus)) <= 0.0 or float(np.dot(rho, ps_plus)) <= 0.0


def _adaptation_schedule(warmup):
    """Start of the first slow window and the (exclusive) end of each window."""
    if warmup < 20:
        return warmup, []
    init, term, base = 75, 50, 25
    if init + term + base > warmup:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    ends, start, size = [], init, base
    last = warmup - term
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return init, ends


def sample_nuts(log_density: Callable, x0, config: NutsConfig = NutsConfig()) -> NutsResult:
    """Run one NUTS chain on an unnormalized log density.

    Parameters
    ----------
    log_density : callable
        Maps a flat vector to ``(value, grad)``; ``value = -inf`` marks an
        invalid point (treated as a divergence).
    x0 : array_like
        Starting point; its log density must be finite.
    config : NutsConfig

    Raises
    ------
    SamplerHealthError
        If more than ``max_divergence_fraction`` of post-warmup transitions
        diverge.
    """
    rng = np.random.default_rng(config.seed)
    q = np.array(x0, dtype=float)
    dim = q.size
    s = _Sampler(log_density, dim, rng, config.max_tree_depth)
    lp, g = s.evaluate(q)
    if not np.isfinite(lp):
        raise ValueError("initial point has non-finite log density")

    eps = s.reasonable_step(q, lp, g)
    da = _DualAveraging(eps, config.target_accept)
    slow_start, ends = _adaptation_schedule(config.warmup)
    n_seen, mean, m2 = 0, np.zeros(dim), np.zeros(dim)
    warm_div = 0

    for it in range(config.warmup):
        q, lp, g, accept, _, div, _ = s.transition(q, lp, g, eps)
        warm_div += int(div)
        eps = da.update(accept)
        if ends and it >= slow_start:
            n_seen += 1
            delta = q - mean
            mean += delta / n_seen
            m2 += delta * (q - mean)
            if it + 1 == ends[0]:
                var = m2 / max(n_seen - 1, 1)
                s.inv_metric = (n_seen / (n_seen + 5.0)) * var + 1e-3 * (5.0 / (n_seen + 5.0))
                ends.pop(0)
                n_seen, mean, m2 = 0, np.zeros(dim), np.zeros(dim)
                eps = s.reasonable_step(q, lp, g, eps)
                da = _DualAveraging(eps, config.target_accept)
    if config.warmup > 0:
        eps = da.final

    samples = np.empty((config.draws, dim))
    dens = np.empty(config.draws)
    depths = np.empty(config.draws, dtype=int)
    accepts = np.empty(config.draws)
    n_div = n_lf = 0
    for i in range(config.draws):
        q, lp, g, accept, depth, div, nlf = s.transition(q, lp, g, eps)
        samples[i], dens[i], depths[i], accepts[i] = q, lp, depth, accept
        n_div += int(div)
        n_lf += nlf
    diag = NutsDiagnostics(n_div, float(accepts.mean()), float(eps), depths, n_lf, s.inv_metric.copy(), warm_div)
    if n_div > config.max_divergence_fraction * config.draws:
        raise SamplerHealthError(f"{n_div} of {config.draws} post-warmup transitions diverged", diag)
    return NutsResult(samples, dens, diag)
