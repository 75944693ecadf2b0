"""Mixed continuous/categorical covariance functions.

Both kernel families are functions of one scaled squared distance between
two inputs::

    E(zp, zq) = sum_j theta_j (xp_j - xq_j)^2 + sum_k sum_i w_k^(i) D_k^(i)[hp_k, hq_k]

The squared-exponential family is ``sigma2 * exp(-E)``, which factors into a
continuous correlation times one ``exp(-D_k)`` per categorical variable.  The
Matern family applies a half-integer Matern profile to ``r = sqrt(E)``.

Everything is computed from a stack of pairwise "features" (one ``n x n``
slice per continuous dimension and per base EDM), so ``E`` is a tensordot with
the scale vector ``[theta, w_1, ..., w_c]`` and its derivative with respect to
any scale is the matching feature slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from wegp.edm import BaseEdmSet
from wegp.errors import DimensionError, ValidationError
from wegp.params import HyperParams

JITTER = 1e-8
_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)
_FAMILIES = {"se": "se", "squared-exponential": "se", "squared_exponential": "se", "matern": "matern"}


@dataclass(frozen=True, eq=False)
class MixedPoint:
    """A continuous vector in ``[0, 1]^d`` plus 0-based categorical level indices."""

    x: np.ndarray
    h: tuple = ()

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", tuple(int(v) for v in self.h))

    def __eq__(self, other):
        return isinstance(other, MixedPoint) and np.array_equal(self.x, other.x) and self.h == other.h

    def __hash__(self):
        return hash((self.x.tobytes(), self.h))

    def __repr__(self):
        return f"MixedPoint(x={self.x.tolist()}, h={list(self.h)})"


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Structure of the mixed kernel: dimensions, bases and radial family."""

    d: int
    cat_levels: tuple = ()
    bases: tuple = ()
    family: str = "se"
    nu: float = 2.5

    def __post_init__(self):
        cat_levels = tuple(int(c) for c in self.cat_levels)
        bases = tuple(self.bases)
        if len(bases) != len(cat_levels):
            raise DimensionError("need one basis set per categorical variable")
        for k, (c, b) in enumerate(zip(cat_levels, bases)):
            if not isinstance(b, BaseEdmSet) or b.n != c:
                raise ValidationError(f"basis {k} must be a BaseEdmSet over {c} levels")
        family = _FAMILIES.get(self.family)
        if family is None:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        if family == "matern" and self.nu not in (0.5, 1.5, 2.5):
            raise ValidationError("Matern smoothness must be one of 1/2, 3/2, 5/2")
        if self.d < 0:
            raise ValidationError("d must be non-negative")
        object.__setattr__(self, "cat_levels", cat_levels)
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def c(self) -> int:
        return len(self.cat_levels)

    @property
    def m_sizes(self) -> tuple:
        return tuple(b.m for b in self.bases)

    @property
    def n_scales(self) -> int:
        return self.d + sum(self.m_sizes)

    def check(self, hp: HyperParams):
        if hp.theta.size != self.d:
            raise DimensionError(f"theta has length {hp.theta.size}, expected {self.d}")
        if tuple(w.size for w in hp.weights) != self.m_sizes:
            raise DimensionError(f"weight sizes {[w.size for w in hp.weights]} != {list(self.m_sizes)}")


def as_arrays(points: Sequence[MixedPoint], spec: KernelSpec):
    """Stack points into ``X`` (n, d) and integer ``H`` (n, c), validating ranges."""
    n = len(points)
    X = np.empty((n, spec.d))
    H = np.empty((n, spec.c), dtype=int)
    for i, z in enumerate(points):
        if z.x.size != spec.d or len(z.h) != spec.c:
            raise DimensionError(f"point {i} does not match the kernel dimensions")
        X[i] = z.x
        H[i] = z.h
    check_arrays(X, H, spec)
    return X, H


def check_arrays(X, H, spec: KernelSpec):
    if X.ndim != 2 or X.shape[1] != spec.d or H.ndim != 2 or H.shape[1] != spec.c or len(X) != len(H):
        raise DimensionError("X and H do not match the kernel dimensions")
    for k, c in enumerate(spec.cat_levels):
        if H.size and (H[:, k].min() < 0 or H[:, k].max() >= c):
            raise IndexError(f"categorical variable {k} has levels outside [0, {c})")


def pair_features(Xa, Ha, Xb, Hb, spec: KernelSpec) -> np.ndarray:
    """Per-scale squared-distance slices, shape ``(d + sum m_k, na, nb)``."""
    na, nb = len(Xa), len(Xb)
    out = np.empty((spec.n_scales, na, nb))
    if spec.d:
        diff = Xa[:, None, :] - Xb[None, :, :]
        out[: spec.d] = np.moveaxis(diff * diff, 2, 0)
    row = spec.d
    for k, basis in enumerate(spec.bases):
        out[row:row + basis.m] = basis.stack[:, Ha[:, k][:, None], Hb[:, k][None, :]]
        row += basis.m
    return out


def scaled_sqdist(features: np.ndarray, hp: HyperParams) -> np.ndarray:
    if features.shape[0] == 0:
        return np.zeros(features.shape[1:])
    return np.tensordot(hp.scales(), features, axes=1)


def radial(E, spec: KernelSpec):
    """Correlation profile ``g(E)`` with ``g(0) = 1``."""
    if spec.family == "se":
        return np.exp(-E)
    r = np.sqrt(np.maximum(E, 0.0))
    if spec.nu == 0.5:
        return np.exp(-r)
    if spec.nu == 1.5:
        return (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)
    return (1.0 + _SQRT5 * r + 5.0 * r * r / 3.0) * np.exp(-_SQRT5 * r)


def radial_deriv(E, spec: KernelSpec):
    """Derivative ``dg/dE``.

    For Matern 1/2 this is unbounded at ``E = 0``; it is set to 0 there, which
    is exact on pairs whose distance is identically zero.
    """
    if spec.family == "se":
        return -np.exp(-E)
    r = np.sqrt(np.maximum(E, 0.0))
    if spec.nu == 0.5:
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = -np.exp(-r[pos]) / (2.0 * r[pos])
        return out
    if spec.nu == 1.5:
        return -1.5 * np.exp(-_SQRT3 * r)
    return -(5.0 / 6.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)


# -- scalar API ----------------------------------------------------------------


def cat_corr(k: int, a: int, b: int, spec: KernelSpec, hp: HyperParams) -> float:
    """Correlation ``exp(-sum_i w_k^(i) D_k^(i)[a, b])`` of categorical variable ``k``."""
    c = spec.cat_levels[k]
    if not (0 <= a < c and 0 <= b < c):
        raise IndexError(f"levels ({a}, {b}) out of range for {c} categories")
    w = hp.weights[k]
    if w.size != spec.bases[k].m:
        raise DimensionError("weight vector does not match the basis size")
    return float(np.exp(-np.dot(w, spec.bases[k].stack[:, a, b])))


def cont_corr(xp, xq, hp: HyperParams) -> float:
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    if xp.shape != xq.shape or xp.size != hp.theta.size:
        raise DimensionError("continuous inputs and theta must have equal lengths")
    return float(np.exp(-np.dot(hp.theta, (xp - xq) ** 2)))


def kernel_value(zp: MixedPoint, zq: MixedPoint, spec: KernelSpec, hp: HyperParams) -> float:
    spec.check(hp)
    Xa, Ha = as_arrays([zp], spec)
    Xb, Hb = as_arrays([zq], spec)
    E = scaled_sqdist(pair_features(Xa, Ha, Xb, Hb, spec), hp)
    return float(hp.sigma2 * radial(E, spec)[0, 0])


# -- matrix API ----------------------------------------------------------------


def _points_to_arrays(points, spec):
    if isinstance(points, tuple) and len(points) == 2 and isinstance(points[0], np.ndarray):
        X, H = points
        check_arrays(X, H, spec)
        return X, H
    return as_arrays(points, spec)


def kernel_from_features(features, spec, hp, jitter=JITTER, diagonal=True):
    """Kernel matrix from precomputed features.

    With ``diagonal`` the result is a training covariance
    ``sigma2 * (g(E) + jitter I) + noise I``.
    """
    g = radial(scaled_sqdist(features, hp), spec)
    if diagonal:
        return kernel_from_radial(g, hp, jitter)
    return hp.sigma2 * g


def kernel_from_radial(g, hp, jitter=JITTER):
    """Training covariance from a square correlation matrix ``g``."""
    K = hp.sigma2 * g
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += hp.sigma2 * jitter + hp.noise
    return K


def kernel_matrix(points, spec: KernelSpec, hp: HyperParams, jitter: float = JITTER) -> np.ndarray:
    """Training covariance with noise and a relative jitter on the diagonal.

    ``points`` is a sequence of :class:`MixedPoint` or an ``(X, H)`` pair.
    """
    spec.check(hp)
    X, H = _points_to_arrays(points, spec)
    F = pair_features(X, H, X, H, spec)
    return kernel_from_features(F, spec, hp, jitter)


def cross_kernel(points_a, points_b, spec: KernelSpec, hp: HyperParams) -> np.ndarray:
    """Noise-free covariance between two point sets."""
    spec.check(hp)
    Xa, Ha = _points_to_arrays(points_a, spec)
    Xb, Hb = _points_to_arrays(points_b, spec)
    return kernel_from_features(pair_features(Xa, Ha, Xb, Hb, spec), spec, hp, diagonal=False)


def gradient_names(spec: KernelSpec) -> list[str]:
    names = ["log_sigma2"] + [f"theta[{j}]" for j in range(spec.d)]
    for k, m in enumerate(spec.m_sizes):
        names += [f"w[{k}][{i}]" for i in range(m)]
    return names + ["log_noise"]


def kernel_gradients(points, spec: KernelSpec, hp: HyperParams, jitter: float = JITTER) -> dict:
    """Analytic derivatives of :func:`kernel_matrix`.

    Keys follow :func:`gradient_names`: ``log_sigma2``, ``theta[j]``,
    ``w[k][i]`` and ``log_noise``.  The jitter scales with ``sigma2`` and is
    therefore part of the ``log_sigma2`` derivative.
    """
    spec.check(hp)
    X, H = _points_to_arrays(points, spec)
    F = pair_features(X, H, X, H, spec)
    E = scaled_sqdist(F, hp)
    g = radial(E, spec)
    dg = hp.sigma2 * radial_deriv(E, spec)
    n = len(X)
    names = gradient_names(spec)
    out = {"log_sigma2": hp.sigma2 * (g + jitter * np.eye(n))}
    for name, slab in zip(names[1:-1], F):
        out[name] = dg * slab
    out["log_noise"] = hp.noise * np.eye(n)
    return out
