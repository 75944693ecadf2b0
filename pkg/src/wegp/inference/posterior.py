"""Hierarchical shrinkage prior and the unconstrained log posterior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit

from wegp.errors import ConditioningError
from wegp.gp import Dataset, lml_natural, pack_features
from wegp.kernel import KernelSpec, pair_features
from wegp.params import HyperParams, ParamLayout

_LOG_2 = np.log(2.0)
_LOG_PI = np.log(np.pi)
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    sigma2 ~ LogNormal(0, sigma2_scale^2); theta_j ~ Uniform(0, 1);
    tau ~ HalfCauchy(alpha); w ~ HalfCauchy(tau); mu ~ Normal(mu_loc, mu_scale^2);
    noise ~ LogNormal(noise_loc, noise_scale^2) when inferred.
    """

    alpha: float = 0.1
    sigma2_loc: float = 0.0
    sigma2_scale: float = 10.0
    mu_loc: float = 0.0
    mu_scale: float = 10.0
    noise_loc: float = -7.0
    noise_scale: float = 3.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def half_cauchy_logpdf(x, scale):
    """``log 2 - log pi - log s - log(1 + (x/s)^2)`` for ``x > 0``."""
    return _LOG_2 - _LOG_PI - np.log(scale) - np.log1p((x / scale) ** 2)


def lognormal_logpdf(x, loc, scale):
    lx = np.log(x)
    return -lx - np.log(scale) - 0.5 * _LOG_2PI - 0.5 * ((lx - loc) / scale) ** 2


def normal_logpdf(x, loc, scale):
    return -np.log(scale) - 0.5 * _LOG_2PI - 0.5 * ((x - loc) / scale) ** 2


def log_prior_unconstrained(u, layout: ParamLayout, prior: PriorSpec):
    """Log prior density plus log Jacobian of the transforms, with gradient."""
    u = np.asarray(u, dtype=float)
    g = np.zeros_like(u)
    value = 0.0

    # sigma2 = exp(u0): lognormal density times Jacobian exp(u0)
    s2 = np.exp(u[0])
    value += lognormal_logpdf(s2, prior.sigma2_loc, prior.sigma2_scale) + u[0]
    g[0] = -(u[0] - prior.sigma2_loc) / prior.sigma2_scale**2

    # theta = sigmoid(u): uniform density, Jacobian sigma(u) sigma(-u)
    ut = u[layout.s_theta]
    value += np.sum(log_expit(ut) + log_expit(-ut))
    g[layout.s_theta] = 1.0 - 2.0 * expit(ut)

    if layout.has_tau:
        # evaluated in log space so tiny tau and w cannot produce 0/0
        ltau = u[layout.i_tau]
        la = np.log(prior.alpha)
        value += _LOG_2 - _LOG_PI - la - np.logaddexp(0.0, 2.0 * (ltau - la)) + ltau
        g[layout.i_tau] = 1.0 - 2.0 * expit(2.0 * (ltau - la))
        lw = u[layout.s_weights]
        z = 2.0 * (lw - ltau)
        value += np.sum(_LOG_2 - _LOG_PI - ltau - np.logaddexp(0.0, z) + lw)
        ratio = expit(z)
        g[layout.s_weights] = 1.0 - 2.0 * ratio
        g[layout.i_tau] += np.sum(-1.0 + 2.0 * ratio)

    mu = u[layout.i_mu]
    value += normal_logpdf(mu, prior.mu_loc, prior.mu_scale)
    g[layout.i_mu] = -(mu - prior.mu_loc) / prior.mu_scale**2

    if layout.infer_noise:
        ln = u[layout.i_noise]
        value += lognormal_logpdf(np.exp(ln), prior.noise_loc, prior.noise_scale) + ln
        g[layout.i_noise] = -(ln - prior.noise_loc) / prior.noise_scale**2
    return float(value), g


class LogDensity(NamedTuple):
    value: float
    grad: np.ndarray


class LogPosterior:
    """Unconstrained log posterior of the GP hyperparameters for fixed data.

    Calling the instance with a flat vector returns ``(value, grad)``.  A
    factorization failure yields ``(-inf, zeros)``; ``failures`` counts them.
    """

    def __init__(self, data: Dataset, spec: KernelSpec, prior: PriorSpec | None = None,
                 infer_noise: bool = False, fixed_noise: float = 0.0):
        data.check(spec)
        self.data = data
        self.spec = spec
        self.prior = prior or PriorSpec()
        self.layout = ParamLayout(spec.d, spec.m_sizes, infer_noise=infer_noise, fixed_noise=fixed_noise)
        self.features = pack_features(pair_features(data.X, data.H, data.X, data.H, spec))
        self.failures = 0

    @property
    def dim(self) -> int:
        return self.layout.size

    def log_likelihood(self, u) -> LogDensity:
        hp = self.layout.unpack(u)
        value, g_nat = lml_natural(self.features, self.data.y, self.spec, hp, self.layout.infer_noise)
        return LogDensity(float(value), self.layout.natural_to_unconstrained(u, g_nat))

    def __call__(self, u) -> LogDensity:
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return LogDensity(-np.inf, np.zeros_like(u))
        with np.errstate(over="ignore", under="ignore"):
            try:
                hp = self.layout.unpack(u)
            except ValueError:
                self.failures += 1
                return LogDensity(-np.inf, np.zeros_like(u))
            try:
                ll, g_nat = lml_natural(self.features, self.data.y, self.spec, hp, self.layout.infer_noise)
            except ConditioningError:
                self.failures += 1
                return LogDensity(-np.inf, np.zeros_like(u))
            lp, g_prior = log_prior_unconstrained(u, self.layout, self.prior)
            value = ll + lp
            grad = self.layout.natural_to_unconstrained(u, g_nat) + g_prior
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return LogDensity(-np.inf, np.zeros_like(u))
        return LogDensity(float(value), grad)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Jittered starting point near unit variance, mid-range theta and weights ~ alpha."""
        lay = self.layout
        u = np.empty(lay.size)
        u[0] = rng.uniform(-1, 1)
        u[lay.s_theta] = rng.uniform(-2, 2, size=lay.d)
        if lay.has_tau:
            u[lay.i_tau] = np.log(self.prior.alpha) + rng.uniform(-1, 1)
            u[lay.s_weights] = np.log(self.prior.alpha) + rng.uniform(-1, 1, size=lay.n_weights)
        u[lay.i_mu] = rng.uniform(-0.5, 0.5)
        if lay.infer_noise:
            u[lay.i_noise] = self.prior.noise_loc + rng.uniform(-1, 1)
        return u

    def prior_draw(self, rng: np.random.Generator, clip: float = 6.0) -> np.ndarray:
        """Unconstrained draw from the prior, clipped to ``[-clip, clip]`` per coordinate."""
        lay, pr = self.layout, self.prior
        u = np.empty(lay.size)
        u[0] = rng.normal(pr.sigma2_loc, pr.sigma2_scale)
        theta = rng.uniform(1e-6, 1 - 1e-6, size=lay.d)
        u[lay.s_theta] = np.log(theta) - np.log1p(-theta)
        if lay.has_tau:
            tau = abs(pr.alpha * rng.standard_cauchy())
            u[lay.i_tau] = np.log(tau)
            w = np.abs(tau * rng.standard_cauchy(size=lay.n_weights))
            u[lay.s_weights] = np.log(w)
        u[lay.i_mu] = rng.normal(pr.mu_loc, pr.mu_scale)
        if lay.infer_noise:
            u[lay.i_noise] = rng.normal(pr.noise_loc, pr.noise_scale)
        return np.clip(u, -clip, clip)


def log_posterior(state, data: Dataset, spec: KernelSpec, prior: PriorSpec | None = None,
                  infer_noise: bool = False, fixed_noise: float = 0.0) -> LogDensity:
    """One-shot evaluation of :class:`LogPosterior` at ``state``."""
    return LogPosterior(data, spec, prior, infer_noise, fixed_noise)(state)
