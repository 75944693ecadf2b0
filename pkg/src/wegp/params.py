"""Kernel hyperparameters and their unconstrained packing.

The flat unconstrained vector is laid out as::

    [log sigma2, logit theta_1..d, log tau, log w (k-major, then i), mu, log noise]

``log tau`` is present only when there is at least one categorical variable,
and ``log noise`` only when noise is inferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from wegp.errors import DimensionError, DomainError


@dataclass(frozen=True, eq=False)
class HyperParams:
    """One full kernel hyperparameter assignment (constrained scale).

    Attributes
    ----------
    sigma2 : float
        Process variance.
    theta : ndarray
        Inverse squared length scales, one per continuous input.
    weights : tuple of ndarray
        Base-EDM weights, one vector per categorical variable.
    noise : float
        Observation noise variance.
    mu : float
        Constant prior mean.
    tau : float or None
        Global shrinkage scale; only meaningful for posterior draws.
    """

    sigma2: float
    theta: np.ndarray
    weights: tuple = ()
    noise: float = 0.0
    mu: float = 0.0
    tau: float | None = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if theta.ndim != 1:
            raise DimensionError("theta must be a vector")
        weights = tuple(np.atleast_1d(np.asarray(w, dtype=float)).copy() for w in self.weights)
        vals = [self.sigma2, self.noise, self.mu, *theta, *(v for w in weights for v in w)]
        if self.tau is not None:
            vals.append(self.tau)
        if not np.all(np.isfinite(vals)):
            raise DomainError("hyperparameters must be finite")
        if self.sigma2 <= 0:
            raise DomainError("sigma2 must be positive")
        if self.noise < 0:
            raise DomainError("noise must be non-negative")
        if np.any(theta < 0):
            raise DomainError("theta must be non-negative")
        if any(np.any(w < 0) for w in weights):
            raise DomainError("weights must be non-negative")
        for arr in (theta, *weights):
            arr.setflags(write=False)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "noise", float(self.noise))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", weights)

    def scales(self) -> np.ndarray:
        """Concatenation of theta and all weights, matching kernel feature order."""
        return np.concatenate([self.theta, *self.weights]) if self.weights else self.theta.copy()

    def replace(self, **changes) -> "HyperParams":
        fields = dict(sigma2=self.sigma2, theta=self.theta, weights=self.weights,
                      noise=self.noise, mu=self.mu, tau=self.tau)
        fields.update(changes)
        return HyperParams(**fields)

    def as_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "theta": self.theta.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "noise": self.noise,
            "mu": self.mu,
            "tau": self.tau,
        }

    def __eq__(self, other):
        if not isinstance(other, HyperParams):
            return NotImplemented
        return self.as_dict() == other.as_dict()


@dataclass(frozen=True)
class ParamLayout:
    """Fixed packing order between :class:`HyperParams` and a flat vector."""

    d: int
    m_sizes: tuple = ()
    infer_noise: bool = False
    fixed_noise: float = 0.0
    has_tau: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m_sizes", tuple(int(m) for m in self.m_sizes))
        object.__setattr__(self, "has_tau", len(self.m_sizes) > 0)

    @property
    def n_weights(self) -> int:
        return sum(self.m_sizes)

    @property
    def size(self) -> int:
        return 1 + self.d + int(self.has_tau) + self.n_weights + 1 + int(self.infer_noise)

    # slices into the flat vector
    @property
    def i_sigma2(self):
        return 0

    @property
    def s_theta(self):
        return slice(1, 1 + self.d)

    @property
    def i_tau(self):
        return 1 + self.d if self.has_tau else None

    @property
    def s_weights(self):
        start = 1 + self.d + int(self.has_tau)
        return slice(start, start + self.n_weights)

    @property
    def i_mu(self):
        return 1 + self.d + int(self.has_tau) + self.n_weights

    @property
    def i_noise(self):
        return self.i_mu + 1 if self.infer_noise else None

    def names(self) -> list[str]:
        out = ["log_sigma2"] + [f"logit_theta[{j}]" for j in range(self.d)]
        if self.has_tau:
            out.append("log_tau")
        for k, m in enumerate(self.m_sizes):
            out += [f"log_w[{k}][{i}]" for i in range(m)]
        out.append("mu")
        if self.infer_noise:
            out.append("log_noise")
        return out

    def pack(self, hp: HyperParams) -> np.ndarray:
        if hp.theta.size != self.d or tuple(w.size for w in hp.weights) != self.m_sizes:
            raise DimensionError("hyperparameters do not match the layout")
        u = np.empty(self.size)
        u[0] = np.log(hp.sigma2)
        u[self.s_theta] = logit(hp.theta)
        if self.has_tau:
            u[self.i_tau] = np.log(hp.tau if hp.tau is not None else 1.0)
        if self.n_weights:
            u[self.s_weights] = np.log(np.concatenate(hp.weights))
        u[self.i_mu] = hp.mu
        if self.infer_noise:
            u[self.i_noise] = np.log(hp.noise)
        return u

    def unpack(self, u) -> HyperParams:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise DimensionError(f"expected a vector of length {self.size}")
        flat_w = np.exp(u[self.s_weights])
        weights, start = [], 0
        for m in self.m_sizes:
            weights.append(flat_w[start:start + m])
            start += m
        return HyperParams(
            sigma2=float(np.exp(u[0])),
            theta=expit(u[self.s_theta]),
            weights=tuple(weights),
            noise=float(np.exp(u[self.i_noise])) if self.infer_noise else self.fixed_noise,
            mu=float(u[self.i_mu]),
            tau=float(np.exp(u[self.i_tau])) if self.has_tau else None,
        )

    def natural_to_unconstrained(self, u, grad_natural) -> np.ndarray:
        """Chain a gradient from natural coordinates to the flat vector.

        ``grad_natural`` is ordered ``[log sigma2, theta, w, mu, log noise]``
        (the last entry only if noise is inferred); ``tau`` gets zero.
        """
        u = np.asarray(u, dtype=float)
        g = np.zeros(self.size)
        d, nw = self.d, self.n_weights
        g[0] = grad_natural[0]
        theta = expit(u[self.s_theta])
        g[self.s_theta] = grad_natural[1:1 + d] * theta * (1.0 - theta)
        g[self.s_weights] = grad_natural[1 + d:1 + d + nw] * np.exp(u[self.s_weights])
        g[self.i_mu] = grad_natural[1 + d + nw]
        if self.infer_noise:
            g[self.i_noise] = grad_natural[2 + d + nw]
        return g
