"""Euclidean distance matrices for categorical variables.

A categorical variable with ``n`` levels gets an ``n x n`` matrix of squared
distances between its levels.  The learned matrix is a non-negative
combination of fixed base EDMs, which keeps it inside the EDM cone without
any semidefinite constraint.  Two families of bases are provided: ordinal
encodings under random permutations of the levels, and extreme directions
of the cone generated by zero-sum vectors.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from wegp.errors import BasisExhaustionError, DimensionError, DomainError, ValidationError

TOL_PSD = 1e-8
TOL_NULL = 1e-10
TOL_NNLS = 1e-10
RANK_RTOL = 1e-9


class EdmValidity(NamedTuple):
    is_edm: bool
    min_gram_eigenvalue: float


@dataclass(frozen=True, eq=False)
class Edm:
    """Squared pairwise distances among the levels of one categorical variable.

    Only the strict upper triangle of the input is read; the stored matrix is
    its exact mirror with a zero diagonal.
    """

    d2: np.ndarray

    def __post_init__(self):
        d2 = np.array(self.d2, dtype=float)
        if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
            raise DimensionError(f"EDM must be square, got shape {d2.shape}")
        n = d2.shape[0]
        if n < 2:
            raise ValidationError("EDM needs at least 2 levels")
        if not np.all(np.isfinite(d2)):
            raise ValidationError("EDM entries must be finite")
        scale = max(1.0, float(np.max(np.abs(d2))))
        if np.max(np.abs(d2 - d2.T)) > 1e-12 * scale:
            raise ValidationError("EDM must be symmetric")
        if np.max(np.abs(np.diag(d2))) > 0:
            raise ValidationError("EDM must have a zero diagonal")
        if np.min(d2) < 0:
            raise ValidationError("EDM entries must be non-negative")
        upper = np.triu(d2, 1)
        mirrored = upper + upper.T
        mirrored.setflags(write=False)
        object.__setattr__(self, "d2", mirrored)

    @property
    def n(self) -> int:
        return self.d2.shape[0]

    def upper(self) -> np.ndarray:
        """Strict upper triangle as a flat vector (row-major)."""
        return self.d2[np.triu_indices(self.n, 1)]

    def __eq__(self, other):
        return isinstance(other, Edm) and np.array_equal(self.d2, other.d2)

    def __hash__(self):
        return hash(self.d2.tobytes())

    def __repr__(self):
        return f"Edm(n={self.n}, d2={self.d2.tolist()})"


@dataclass(frozen=True)
class Provenance:
    """Where a base EDM came from: ``kind`` plus the generating data."""

    kind: str  # "ordinal" | "extreme" | "onehot"
    data: tuple = ()


@dataclass(frozen=True, eq=False)
class BaseEdmSet:
    """Ordered, linearly independent base EDMs for one categorical variable."""

    bases: tuple
    provenance: tuple = field(default=())

    def __post_init__(self):
        bases = tuple(self.bases)
        if not bases:
            raise ValidationError("a basis set needs at least one EDM")
        n = bases[0].n
        if any(b.n != n for b in bases):
            raise DimensionError("all base EDMs must share the same level count")
        m = len(bases)
        if m > n * (n - 1) // 2:
            raise ValidationError(f"at most n(n-1)/2 = {n * (n - 1) // 2} independent bases exist")
        if _rank(np.array([b.upper() for b in bases])) != m:
            raise ValidationError("base EDMs are not linearly independent")
        prov = tuple(self.provenance) or tuple(Provenance("unknown") for _ in bases)
        if len(prov) != m:
            raise DimensionError("one provenance entry per basis is required")
        stack = np.array([b.d2 for b in bases])
        stack.setflags(write=False)
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "_stack", stack)

    @property
    def n(self) -> int:
        return self.bases[0].n

    @property
    def m(self) -> int:
        return len(self.bases)

    @property
    def stack(self) -> np.ndarray:
        """Array of shape ``(m, n, n)``."""
        return self._stack

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        return self.bases[i]

    def __eq__(self, other):
        return (
            isinstance(other, BaseEdmSet)
            and self.provenance == other.provenance
            and np.array_equal(self.stack, other.stack)
        )

    def __hash__(self):
        return hash(self.stack.tobytes())


def _rank(rows: np.ndarray) -> int:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        return 0
    s = np.linalg.svd(rows, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def gram_matrix(d2) -> np.ndarray:
    """Centered Gram matrix ``-1/2 H D H`` of a squared-distance matrix."""
    d2 = np.asarray(d2, dtype=float)
    n = d2.shape[0]
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    return -0.5 * h @ d2 @ h


def validate_edm(d2, tol_psd: float = TOL_PSD) -> EdmValidity:
    """Check whether ``d2`` is a Euclidean distance matrix.

    The matrix must be symmetric, have zero diagonal and non-negative entries,
    and satisfy Schoenberg's criterion: its centered Gram matrix is positive
    semidefinite up to ``tol_psd * max(1, trace(G))``.

    Returns
    -------
    EdmValidity
        ``is_edm`` and the smallest Gram eigenvalue (always reported).
    """
    if isinstance(d2, Edm):
        d2 = d2.d2
    d2 = np.asarray(d2, dtype=float)
    if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {d2.shape}")
    if d2.shape[0] < 2:
        raise DimensionError("need n >= 2")
    g = gram_matrix(d2)
    g = 0.5 * (g + g.T)
    eig = np.linalg.eigvalsh(g)
    min_eig = float(eig[0])
    scale = max(1.0, float(np.max(np.abs(d2))))
    structural = (
        np.all(np.isfinite(d2))
        and np.max(np.abs(d2 - d2.T)) <= 1e-12 * scale
        and np.all(np.diag(d2) == 0)
        and np.min(d2) >= 0
    )
    psd = min_eig >= -tol_psd * max(1.0, float(np.trace(g)))
    return EdmValidity(bool(structural and psd), min_eig)


def ordinal_base_edm(permutation: Sequence[int]) -> Edm:
    """Base EDM from ordinal codes: level ``i`` is encoded as ``permutation[i]``.

    ``permutation`` must be a bijection onto ``{1, ..., n}``.
    """
    perm = np.asarray(permutation)
    n = perm.size
    if perm.ndim != 1 or n < 2:
        raise ValidationError("permutation must be a 1-d sequence of length >= 2")
    if not np.issubdtype(perm.dtype, np.integer):
        if not np.all(perm == np.round(perm)):
            raise ValidationError("permutation entries must be integers")
        perm = perm.astype(int)
    if sorted(perm.tolist()) != list(range(1, n + 1)):
        raise ValidationError(f"{perm.tolist()} is not a permutation of 1..{n}")
    p = perm.astype(float)
    return Edm((p[:, None] - p[None, :]) ** 2)


def build_ordinal_basis(n: int, m: int, rng: np.random.Generator, max_attempts: int | None = None) -> BaseEdmSet:
    """Collect ``m`` linearly independent ordinal base EDMs by random permutation.

    Permutations already tried are skipped.  A candidate is kept only when it
    raises the rank of the stacked upper triangles.
    """
    if n < 2:
        raise ValidationError("need n >= 2 levels")
    if not 1 <= m <= n * (n - 1) // 2:
        raise ValidationError(f"m must lie in [1, {n * (n - 1) // 2}] for n={n}")
    if max_attempts is None:
        max_attempts = 50 * m
    n_perms = math.factorial(n)
    seen = set()
    kept, rows, prov = [], [], []
    attempts = 0
    while len(kept) < m and attempts < max_attempts and len(seen) < n_perms:
        perm = tuple(int(v) + 1 for v in rng.permutation(n))
        if perm in seen:
            continue
        seen.add(perm)
        attempts += 1
        cand = ordinal_base_edm(perm)
        if _rank(np.array(rows + [cand.upper()])) > len(rows):
            kept.append(cand)
            rows.append(cand.upper())
            prov.append(Provenance("ordinal", perm))
    if len(kept) < m:
        raise BasisExhaustionError(
            f"ordinal permutations reached rank {len(kept)} < {m} after {attempts} attempts", len(kept)
        )
    return BaseEdmSet(tuple(kept), tuple(prov))


def _check_generator(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise ValidationError("generator must be a vector of length >= 2")
    if not np.all(np.isfinite(z)) or not np.any(z != 0):
        raise ValidationError("generator must be finite and nonzero")
    if abs(z.sum()) > TOL_NULL * max(1.0, float(np.abs(z).sum())):
        raise ValidationError(f"generator entries must sum to zero, got {z.sum():.3e}")
    return z


def extreme_direction(z) -> Edm:
    """Extreme ray ``(z*z) 1^T + 1 (z*z)^T - 2 z z^T`` of the EDM cone."""
    z = _check_generator(z)
    return Edm((z[:, None] - z[None, :]) ** 2)


def build_extreme_basis(
    n: int, rng: np.random.Generator, max_attempts: int | None = None, anchor=None
) -> BaseEdmSet:
    """Draw ``n(n-1)/2`` linearly independent extreme directions.

    Generators are standard normal vectors projected onto the zero-sum
    hyperplane and scaled to unit length.

    The EDM cone is not polyhedral for ``n >= 3``, so no fixed finite set of
    rays covers all of it.  Passing an ``anchor`` EDM first seeds the set with
    the rays of the anchor's own point configuration (unit eigenvectors of its
    centered Gram matrix); the anchor is then an exact non-negative
    combination of the returned basis, and the remaining slots are random.
    """
    kept, prov = [], []
    if anchor is not None:
        if not isinstance(anchor, Edm):
            anchor = Edm(anchor)
        if anchor.n != n:
            raise DimensionError(f"anchor has {anchor.n} levels, expected {n}")
        kept, prov = _anchor_rays(anchor)
    return _extreme_fill(n, n * (n - 1) // 2, rng, kept, prov, max_attempts)


def _anchor_rays(anchor: Edm):
    g = gram_matrix(anchor.d2)
    lam, vecs = np.linalg.eigh(0.5 * (g + g.T))
    kept, prov, rows = [], [], []
    tol = TOL_PSD * max(1.0, float(np.max(lam)))
    for k in np.argsort(lam)[::-1]:
        if lam[k] <= tol:
            break
        z = vecs[:, k] - vecs[:, k].mean()
        z /= np.linalg.norm(z)
        z[-1] = -z[:-1].sum()
        cand = extreme_direction(z)
        if _rank(np.array(rows + [cand.upper()])) > len(rows):
            kept.append(cand)
            rows.append(cand.upper())
            prov.append(Provenance("extreme", tuple(float(v) for v in z)))
    return kept, prov


def _extreme_fill(n, m, rng, kept, prov, max_attempts=None):
    if n < 2:
        raise ValidationError("need n >= 2 levels")
    if max_attempts is None:
        max_attempts = 50 * max(m, 1)
    kept, prov = list(kept), list(prov)
    rows = [b.upper() for b in kept]
    attempts = 0
    while len(kept) < m and attempts < max_attempts:
        attempts += 1
        z = rng.standard_normal(n)
        z -= z.mean()
        z /= np.linalg.norm(z)
        z[-1] = -z[:-1].sum()
        cand = extreme_direction(z)
        if _rank(np.array(rows + [cand.upper()])) > len(rows):
            kept.append(cand)
            rows.append(cand.upper())
            prov.append(Provenance("extreme", tuple(float(v) for v in z)))
    if len(kept) < m:
        raise BasisExhaustionError(f"extreme directions reached rank {len(kept)} < {m}", len(kept))
    return BaseEdmSet(tuple(kept), tuple(prov))


def onehot_basis(n: int) -> BaseEdmSet:
    """Single base EDM with ``2`` off the diagonal, as induced by one-hot codes."""
    d2 = 2.0 * (1.0 - np.eye(n))
    return BaseEdmSet((Edm(d2),), (Provenance("onehot"),))


def build_basis(n: int, m: int | None, scheme: str, rng: np.random.Generator) -> BaseEdmSet:
    """Dispatch on the basis scheme name used by experiment configs.

    ``ordinal-then-extreme`` tries ordinal bases first and tops up any shortfall
    with extreme directions.
    """
    full = n * (n - 1) // 2
    m = full if m is None else m
    if scheme == "ordinal":
        return build_ordinal_basis(n, m, rng)
    if scheme == "extreme":
        if m == full:
            return build_extreme_basis(n, rng)
        return _extreme_fill(n, m, rng, [], [])
    if scheme == "ordinal-then-extreme":
        try:
            return build_ordinal_basis(n, m, rng)
        except BasisExhaustionError:
            partial = _partial_ordinal(n, m, rng)
            return _extreme_fill(n, m, rng, partial.bases, partial.provenance)
    if scheme == "onehot":
        return onehot_basis(n)
    raise ValidationError(f"unknown basis scheme {scheme!r}")


def _partial_ordinal(n, m, rng):
    # largest independent ordinal set reachable from exhaustive enumeration
    import itertools

    kept, rows, prov = [], [], []
    for perm in itertools.permutations(range(1, n + 1)):
        cand = ordinal_base_edm(perm)
        if _rank(np.array(rows + [cand.upper()])) > len(rows):
            kept.append(cand)
            rows.append(cand.upper())
            prov.append(Provenance("ordinal", perm))
        if len(kept) == m:
            break
    return BaseEdmSet(tuple(kept), tuple(prov))


def weighted_edm(basis: BaseEdmSet, weights) -> Edm:
    """Non-negative combination ``sum_i w_i D_i`` of the base EDMs."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size != basis.m:
        raise DimensionError(f"expected {basis.m} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and non-negative")
    return Edm(np.tensordot(w, basis.stack, axes=1))


def nnls(a, b, tol: float = TOL_NNLS, max_iter: int | None = None):
    """Lawson-Hanson active-set solver for ``min ||a x - b||`` s.t. ``x >= 0``.

    Terminates once every dual variable ``a^T (b - a x)`` on the zero set is
    at most ``tol`` (scaled by ``||a|| ||b||``).

    Returns
    -------
    x : ndarray
    rnorm : float
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rows, cols = a.shape
    if b.shape != (rows,):
        raise DimensionError("right-hand side length does not match")
    if max_iter is None:
        max_iter = 3 * cols + 30
    tol = tol * max(1.0, np.linalg.norm(a) * np.linalg.norm(b))
    x = np.zeros(cols)
    passive = np.zeros(cols, dtype=bool)
    w = a.T @ (b - a @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol and it < max_iter:
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            s = np.zeros(cols)
            idx = np.flatnonzero(passive)
            s[idx] = np.linalg.lstsq(a[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                x = s
                break
            neg = idx[s[idx] <= 0]
            step = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + step * (s - x)
            passive &= x > 1e-15 * max(1.0, np.max(np.abs(x)))
            x[~passive] = 0.0
            if not passive.any():
                break
        w = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(b - a @ x))


class ConeReconstruction(NamedTuple):
    weights: np.ndarray
    residual: float


def reconstruct_in_cone(target, basis: BaseEdmSet) -> ConeReconstruction:
    """Best non-negative combination of ``basis`` approximating ``target``.

    Works on strict upper-triangle vectorizations.  A positive residual means
    the target lies outside the conic hull of the basis.
    """
    if not isinstance(target, Edm):
        target = Edm(target)
    if target.n != basis.n:
        raise DimensionError(f"target has {target.n} levels, basis has {basis.n}")
    a = np.array([bb.upper() for bb in basis.bases]).T
    w, res = nnls(a, target.upper())
    return ConeReconstruction(w, res)


# -- plain-text serialization ------------------------------------------------


def _write_matrix(buf, mat):
    for row in mat:
        buf.write(" ".join(repr(float(v)) for v in row) + "\n")


def edm_to_text(edm: Edm) -> str:
    buf = io.StringIO()
    buf.write(f"{edm.n} 1\n")
    _write_matrix(buf, edm.d2)
    return buf.getvalue()


def basis_to_text(basis: BaseEdmSet) -> str:
    """Header ``n m`` then, per basis, a ``# kind data...`` line and ``n`` rows."""
    buf = io.StringIO()
    buf.write(f"{basis.n} {basis.m}\n")
    for b, p in zip(basis.bases, basis.provenance):
        buf.write("# " + " ".join([p.kind] + [repr(v) for v in p.data]) + "\n")
        _write_matrix(buf, b.d2)
    return buf.getvalue()


def _parse(text):
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    try:
        n, m = (int(v) for v in lines[0].split())
    except (ValueError, IndexError) as exc:
        raise ValidationError("missing 'n m' header line") from exc
    mats, prov = [], []
    rows = []
    for ln in lines[1:]:
        if ln.startswith("#"):
            parts = ln[1:].split()
            kind = parts[0] if parts else "unknown"
            data = tuple(int(v) if kind == "ordinal" else float(v) for v in parts[1:])
            prov.append(Provenance(kind, data))
            continue
        rows.append([float(v) for v in ln.split()])
        if len(rows) == n:
            mats.append(Edm(np.array(rows)))
            rows = []
    if len(mats) != m or rows:
        raise ValidationError(f"expected {m} matrices of size {n}")
    return mats, prov


def edm_from_text(text: str) -> Edm:
    mats, _ = _parse(text)
    if len(mats) != 1:
        raise ValidationError("text holds more than one matrix")
    return mats[0]


def basis_from_text(text: str) -> BaseEdmSet:
    mats, prov = _parse(text)
    return BaseEdmSet(tuple(mats), tuple(prov) if prov else ())
