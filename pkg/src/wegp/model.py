"""End-to-end WEGP surrogate: bases, standardization, inference and prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from wegp.edm import build_basis
from wegp.errors import OptimizationError, SamplerHealthError
from wegp.gp import Dataset, FittedGp, fit, predict_arrays
from wegp.inference import (
    MapConfig,
    NutsConfig,
    PosteriorDraws,
    PriorSpec,
    map_estimate,
    nuts_sample,
)
from wegp.kernel import KernelSpec, pair_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """How a surrogate is built and fitted.

    ``m_policy`` is ``"full"`` for ``c_k (c_k - 1) / 2`` bases per variable,
    or an integer capped at that value.
    """

    scheme: str = "ordinal"
    m_policy: object = "full"
    family: str = "se"
    nu: float = 2.5
    inference: str = "nuts"
    nuts: NutsConfig = field(default_factory=NutsConfig)
    map: MapConfig = field(default_factory=MapConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)
    infer_noise: bool = False
    fixed_noise: float = 0.0
    map_fallback: bool = True

    def __post_init__(self):
        if self.inference not in ("nuts", "map"):
            raise ValueError(f"unknown inference method {self.inference!r}")
        if self.m_policy != "full" and (not isinstance(self.m_policy, int) or self.m_policy < 1):
            raise ValueError("m_policy must be 'full' or a positive integer")

    def m_for(self, n_levels: int) -> int:
        full = n_levels * (n_levels - 1) // 2
        return full if self.m_policy == "full" else min(int(self.m_policy), full)


def make_spec(d: int, levels, config: ModelConfig, rng: np.random.Generator) -> KernelSpec:
    """Kernel structure with freshly drawn bases for each categorical variable."""
    bases = [build_basis(ck, config.m_for(ck), config.scheme, rng) for ck in levels]
    return KernelSpec(d, tuple(levels), bases, family=config.family, nu=config.nu)


@dataclass(eq=False)
class FittedModel:
    """Posterior draws fitted on standardized responses.

    Predictions are returned in the original response units.
    """

    spec: KernelSpec
    draws: PosteriorDraws
    gps: list
    y_mean: float
    y_scale: float
    fallback_used: bool = False

    def predict_draws(self, X, H, return_var=True):
        """Per-draw means and latent variances, arrays of shape ``(L, N)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = np.asarray(H, dtype=int).reshape(len(X), -1)
        train = self.gps[0].data
        feats = pair_features(X, H, train.X, train.H, self.spec)
        means, vars_ = [], []
        for gp in self.gps:
            m, v = predict_arrays(gp, X, H, features=feats, return_var=return_var)
            means.append(m)
            if return_var:
                vars_.append(v)
        means = self.y_mean + self.y_scale * np.array(means)
        if not return_var:
            return means, None
        return means, self.y_scale**2 * np.array(vars_)

    def predict_mean(self, X, H) -> np.ndarray:
        """Draw-averaged predictive mean."""
        means, _ = self.predict_draws(X, H, return_var=False)
        return means.mean(axis=0)


def standardize(y):
    y = np.asarray(y, dtype=float)
    mean = float(y.mean())
    scale = float(y.std())
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def fit_model(data: Dataset, spec: KernelSpec, config: ModelConfig, seed: int = 0,
              n_draws: int | None = None) -> FittedModel:
    """Fit hyperparameters on standardized responses and factorize each kept draw.

    ``n_draws`` stride-thins the chain before factorization.  With NUTS, a
    sampler-health failure falls back to MAP when ``config.map_fallback``.
    """
    ys, mean, scale = standardize(data.y)
    sdata = data.with_y(ys)
    fallback = False
    draws = None
    if config.inference == "nuts":
        nuts_cfg = NutsConfig(**{**config.nuts.__dict__, "seed": seed})
        try:
            draws = nuts_sample(sdata, spec, config.prior, nuts_cfg, config.infer_noise, config.fixed_noise)
        except (SamplerHealthError, OptimizationError) as exc:
            if not config.map_fallback:
                raise
            log.warning("NUTS failed (%s); falling back to MAP", exc)
            fallback = True
    if draws is None:
        map_cfg = MapConfig(**{**config.map.__dict__, "seed": seed})
        hp = map_estimate(sdata, spec, config.prior, map_cfg, config.infer_noise, config.fixed_noise)
        draws = PosteriorDraws([hp])
    if n_draws is not None:
        draws = draws.thin(n_draws)
    feats = pair_features(sdata.X, sdata.H, sdata.X, sdata.H, spec)
    gps: list[FittedGp] = [fit(sdata, spec, hp, features=feats) for hp in draws]
    return FittedModel(spec, draws, gps, mean, scale, fallback)
