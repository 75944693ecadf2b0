"""Mixed search spaces and their sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wegp.errors import ValidationError
from wegp.kernel import MixedPoint


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds for continuous inputs plus level counts for categorical ones.

    Points handed to models live in the normalized box ``[0, 1]^d``;
    :meth:`to_raw` maps them back to raw units.
    """

    lower: tuple
    upper: tuple
    levels: tuple = ()
    labels: tuple | None = None
    n_cand: int = 500

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValidationError("lower and upper bounds differ in length")
        if not all(np.isfinite(lo + hi)):
            raise ValidationError("bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValidationError("each lower bound must be below its upper bound")
        levels = tuple(int(c) for c in self.levels)
        if any(c < 2 for c in levels):
            raise ValidationError("categorical variables need at least two levels")
        if self.n_cand < 1:
            raise ValidationError("n_cand must be >= 1")
        if self.labels is not None and len(self.labels) != len(levels):
            raise ValidationError("one label list per categorical variable")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "levels", levels)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def c(self) -> int:
        return len(self.levels)

    def to_raw(self, x) -> np.ndarray:
        lo, hi = np.array(self.lower), np.array(self.upper)
        return lo + np.asarray(x, dtype=float) * (hi - lo)

    def to_unit(self, raw) -> np.ndarray:
        lo, hi = np.array(self.lower), np.array(self.upper)
        return (np.asarray(raw, dtype=float) - lo) / (hi - lo)

    def sample_arrays(self, n: int, rng: np.random.Generator):
        """``n`` uniform points as ``(X, H)`` arrays."""
        X = rng.uniform(size=(n, self.d))
        H = np.empty((n, self.c), dtype=int)
        for k, ck in enumerate(self.levels):
            H[:, k] = rng.integers(ck, size=n)
        return X, H

    def sample(self, n: int, rng: np.random.Generator) -> list:
        X, H = self.sample_arrays(n, rng)
        return [MixedPoint(x, h) for x, h in zip(X, H)]
