"""Exact GP regression for one fixed hyperparameter assignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri

from wegp.errors import ConditioningError, DimensionError, ValidationError
from wegp.kernel import (
    JITTER,
    KernelSpec,
    MixedPoint,
    as_arrays,
    check_arrays,
    kernel_from_features,
    kernel_from_radial,
    pair_features,
    radial,
    radial_deriv,
    scaled_sqdist,
)
from wegp.params import HyperParams, ParamLayout

log = logging.getLogger(__name__)

JITTER_LADDER = tuple(JITTER * 10.0 ** k for k in range(5))  # 1e-8 .. 1e-4 (times sigma2)
_LOG_2PI = np.log(2.0 * np.pi)

_clamps = {"count": 0}


def variance_clamp_count() -> int:
    """Number of predictive variances clamped after a raw value below ``-1e-8 sigma2``."""
    return _clamps["count"]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training inputs ``X`` (n, d), levels ``H`` (n, c) and responses ``y``."""

    X: np.ndarray
    H: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        H = np.asarray(self.H, dtype=int).reshape(len(X), -1)
        y = np.asarray(self.y, dtype=float).ravel()
        if not (len(X) == len(H) == len(y)):
            raise DimensionError("X, H and y must have equal lengths")
        if len(y) < 1:
            raise ValidationError("a dataset needs at least one observation")
        for arr in (X, H, y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points: Sequence[MixedPoint], y) -> "Dataset":
        if not points:
            raise ValidationError("a dataset needs at least one observation")
        X = np.array([z.x for z in points], dtype=float).reshape(len(points), -1)
        H = np.array([z.h for z in points], dtype=int).reshape(len(points), -1)
        return cls(X, H, y)

    def __len__(self):
        return len(self.y)

    @property
    def points(self) -> list[MixedPoint]:
        return [MixedPoint(x, h) for x, h in zip(self.X, self.H)]

    def append(self, z: MixedPoint, y: float) -> "Dataset":
        return Dataset(
            np.vstack([self.X, z.x[None, :]]),
            np.vstack([self.H, np.asarray(z.h, dtype=int).reshape(1, -1)]),
            np.append(self.y, y),
        )

    def with_y(self, y) -> "Dataset":
        return Dataset(self.X, self.H, y)

    def check(self, spec: KernelSpec):
        check_arrays(self.X, self.H, spec)


@dataclass(frozen=True, eq=False)
class FittedGp:
    """A GP conditioned on data: Cholesky factor and ``alpha = K^{-1}(y - mu)``."""

    spec: KernelSpec
    hp: HyperParams
    chol: np.ndarray
    alpha: np.ndarray
    data: Dataset
    jitter: float


class Prediction(NamedTuple):
    mean: float
    var: float


def _cholesky(features, spec, hp, g=None):
    if g is None:
        g = radial(scaled_sqdist(features, hp), spec)
    tried = []
    for jit in JITTER_LADDER:
        K = kernel_from_radial(g, hp, jitter=jit)
        tried.append(jit * hp.sigma2)
        try:
            return np.linalg.cholesky(K), K, jit
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(f"Cholesky failed up to jitter {tried[-1]:.1e}", tried)


def fit(data: Dataset, spec: KernelSpec, hp: HyperParams, features: np.ndarray | None = None) -> FittedGp:
    """Factorize the training covariance, escalating jitter x10 up to ``1e-4 sigma2``."""
    spec.check(hp)
    if features is None:
        data.check(spec)
        features = pair_features(data.X, data.H, data.X, data.H, spec)
    L, _, jit = _cholesky(features, spec, hp)
    alpha = cho_solve((L, True), data.y - hp.mu)
    return FittedGp(spec, hp, L, alpha, data, jit)


def predict_arrays(gp: FittedGp, X, H, features=None, return_var=True):
    """Vectorized posterior mean and noise-free variance at many points.

    ``features`` may hold precomputed ``pair_features(X, H, train)``.
    """
    if features is None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = np.asarray(H, dtype=int).reshape(len(X), -1)
        check_arrays(X, H, gp.spec)
        features = pair_features(X, H, gp.data.X, gp.data.H, gp.spec)
    k = kernel_from_features(features, gp.spec, gp.hp, diagonal=False)
    mean = gp.hp.mu + k @ gp.alpha
    if not return_var:
        return mean, None
    v = solve_triangular(gp.chol, k.T, lower=True)
    var = gp.hp.sigma2 - np.einsum("ij,ij->j", v, v)
    bad = var < -1e-8 * gp.hp.sigma2
    if np.any(bad):
        _clamps["count"] += int(bad.sum())
        log.warning("clamped %d predictive variances (min %.3e)", int(bad.sum()), float(var.min()))
    return mean, np.maximum(var, 0.0)


def predict(gp: FittedGp, z: MixedPoint) -> Prediction:
    X, H = as_arrays([z], gp.spec)
    mean, var = predict_arrays(gp, X, H)
    return Prediction(float(mean[0]), float(var[0]))


class LmlResult(NamedTuple):
    value: float
    grad: np.ndarray


class PackedFeatures(NamedTuple):
    """Strict upper triangle of square training features, shape ``(P, n(n-1)/2)``.

    Training features are symmetric with a zero diagonal, so the triangle
    carries everything the likelihood needs at half the memory traffic.
    """

    tri: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    n: int


def pack_features(features) -> PackedFeatures:
    n = features.shape[1]
    rows, cols = np.triu_indices(n, 1)
    return PackedFeatures(np.ascontiguousarray(features[:, rows, cols]), rows, cols, n)


def _packed_cholesky(packed: PackedFeatures, g_tri, hp):
    n = packed.n
    K = np.empty((n, n))
    off = hp.sigma2 * g_tri
    K[packed.rows, packed.cols] = off
    K[packed.cols, packed.rows] = off
    tried = []
    for jit in JITTER_LADDER:
        np.fill_diagonal(K, hp.sigma2 * (1.0 + jit) + hp.noise)
        tried.append(jit * hp.sigma2)
        try:
            return np.linalg.cholesky(K), jit
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(f"Cholesky failed up to jitter {tried[-1]:.1e}", tried)


def lml_natural(features, y, spec: KernelSpec, hp: HyperParams, infer_noise: bool, want_grad=True):
    """Log marginal likelihood and its gradient in natural coordinates.

    ``features`` is a square training stack or its :class:`PackedFeatures`.
    The gradient is ordered ``[log sigma2, theta, w, mu, (log noise)]``.
    """
    packed = features if isinstance(features, PackedFeatures) else pack_features(features)
    scales = hp.scales()
    e = scales @ packed.tri if scales.size else np.zeros(packed.tri.shape[1])
    g = radial(e, spec)
    L, jit = _packed_cholesky(packed, g, hp)
    n = len(y)
    r = y - hp.mu
    alpha = cho_solve((L, True), r)
    value = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI
    if not want_grad:
        return value, None
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise ConditioningError("inverse from Cholesky factor failed", [jit * hp.sigma2])
    # dpotri fills the lower triangle; W = alpha alpha^T - K^{-1}
    w_tri = alpha[packed.rows] * alpha[packed.cols] - Kinv[packed.cols, packed.rows]
    tr_w = alpha @ alpha - np.trace(Kinv)
    dg = hp.sigma2 * radial_deriv(e, spec)
    grad = np.empty(1 + spec.n_scales + 1 + int(infer_noise))
    # off-diagonal pairs appear twice in the full contraction, halving cancels
    grad[0] = hp.sigma2 * (w_tri @ g) + 0.5 * hp.sigma2 * (1.0 + jit) * tr_w
    if spec.n_scales:
        grad[1:1 + spec.n_scales] = packed.tri @ (w_tri * dg)
    grad[1 + spec.n_scales] = alpha.sum()
    if infer_noise:
        grad[-1] = 0.5 * hp.noise * tr_w
    return value, grad


def log_marginal_likelihood(
    data: Dataset, spec: KernelSpec, hp: HyperParams, layout: ParamLayout | None = None,
    features: np.ndarray | None = None,
) -> LmlResult:
    """Gaussian log evidence of ``data.y`` and its gradient on the unconstrained scale.

    The gradient is taken with respect to the flat vector of ``layout``
    (default: noise held fixed at ``hp.noise``) via the chain rule; it has a
    zero entry for ``log tau``, which the likelihood does not depend on.
    """
    spec.check(hp)
    if layout is None:
        layout = ParamLayout(spec.d, spec.m_sizes, infer_noise=False, fixed_noise=hp.noise)
    if features is None:
        data.check(spec)
        features = pair_features(data.X, data.H, data.X, data.H, spec)
    value, g_nat = lml_natural(features, data.y, spec, hp, layout.infer_noise)
    hp_packable = hp if hp.tau is not None or not layout.has_tau else hp.replace(tau=1.0)
    u = layout.pack(hp_packable)
    return LmlResult(float(value), layout.natural_to_unconstrained(u, g_nat))
