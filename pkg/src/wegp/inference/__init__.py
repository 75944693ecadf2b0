"""Fully Bayesian hyperparameter inference."""

from wegp.inference.mcmc import (
    MapConfig,
    PosteriorDraws,
    map_estimate,
    map_search,
    maximize,
    nuts_sample,
)
from wegp.inference.nuts import NutsConfig, NutsDiagnostics, NutsResult, sample_nuts
from wegp.inference.posterior import (
    LogPosterior,
    PriorSpec,
    half_cauchy_logpdf,
    log_posterior,
    log_prior_unconstrained,
)

__all__ = [
    "LogPosterior",
    "MapConfig",
    "NutsConfig",
    "NutsDiagnostics",
    "NutsResult",
    "PosteriorDraws",
    "PriorSpec",
    "half_cauchy_logpdf",
    "log_posterior",
    "log_prior_unconstrained",
    "map_estimate",
    "map_search",
    "maximize",
    "nuts_sample",
    "sample_nuts",
]
