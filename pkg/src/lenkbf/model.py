"""Drift models, their short-range Lipschitz metadata, and the canonical transform.

Drifts operate on the last axis, so a single state of shape ``(n,)`` and an
ensemble of shape ``(M, n)`` go through the same code path.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .locmat import circ_distance, distance_matrix, localization_stats

__all__ = [
    "DriftModel",
    "ObsNoiseSpec",
    "CanonicalSystem",
    "DominanceReport",
    "lorenz96_drift",
    "lorenz96_truncated_drift",
    "lipschitz_metadata",
    "lorenz96_model",
    "truncated_lorenz96_model",
    "verify_dominance",
    "canonicalize",
]

L96_FORCING = 8.0
L96_CAP = 40.0


def _check_l96(X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] < 4:
        raise ValueError(f"Lorenz-96 needs n >= 4, got n={X.shape[-1]}")
    return X


@lru_cache(maxsize=64)
def _stencil(n):
    s = np.arange(n)
    return (s + 1) % n, (s - 1) % n, (s - 2) % n


def _advection(X):
    ip1, im1, im2 = _stencil(X.shape[-1])
    return (X[..., ip1] - X[..., im2]) * X[..., im1]


def lorenz96_drift(X, forcing=L96_FORCING):
    """``f_s = (x_{s+1} - x_{s-2}) x_{s-1} - x_s + forcing`` with periodic indexing."""
    X = _check_l96(X)
    return _advection(X) - X + forcing


def lorenz96_truncated_drift(X, cap=L96_CAP, forcing=0.0):
    """Soft-truncated Lorenz-96 drift.

    The advection term is switched off whenever ``||X||_inf > cap``, leaving
    the linear damping ``-x_s``.  The printed form carries no constant
    forcing, hence ``forcing=0`` by default; pass ``forcing=8`` to compare with
    :func:`lorenz96_drift` inside the cap.
    """
    X = _check_l96(X)
    if not cap > 0:
        raise ValueError(f"cap must be > 0, got {cap}")
    inside = np.max(np.abs(X), axis=-1, keepdims=True) <= cap
    return np.where(inside, _advection(X), 0.0) - X + forcing


def lipschitz_metadata(cap=L96_CAP, n=None):
    """Per-distance Lipschitz constants ``F_k`` and row-sum ``C_f`` for truncated L96.

    Returns
    -------
    F : tuple of float
        ``(F_0, F_1, F_2)``; ``F_k = 0`` for ``k > 2``.
    c_f : float
        Largest row sum ``max_i sum_j F_{d(i,j)}``.  For ``n >= 5`` (or
        ``n=None``) this is ``F_0 + 2 F_1 + 2 F_2``.
    """
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    F = (1.0, 2.0 * cap, float(cap))
    if n is None or n >= 5:
        c_f = F[0] + 2 * F[1] + 2 * F[2]
    else:
        c_f = _row_sum_constant(F, n, circ_distance)
    return F, float(c_f)


def _lipschitz_lookup(seq, d):
    seq = np.asarray(seq, dtype=float)
    out = np.zeros(d.shape)
    m = d < len(seq)
    out[m] = seq[d[m]]
    return out


def _row_sum_constant(seq, n, dist):
    d = distance_matrix(n, dist)
    return float(_lipschitz_lookup(seq, d).sum(axis=1).max())


@dataclass(frozen=True)
class DriftModel:
    """A drift map with the short-range Lipschitz data describing it."""

    n: int
    drift: Callable = field(repr=False)
    lipschitz_seq: Sequence[float] = (1.0,)
    dist: str = "circular"
    name: str = "custom"

    def __post_init__(self):
        seq = tuple(float(v) for v in self.lipschitz_seq)
        if any(v < 0 for v in seq):
            raise ValueError("lipschitz_seq must be nonnegative")
        object.__setattr__(self, "lipschitz_seq", seq)

    @property
    def c_f(self):
        return _row_sum_constant(self.lipschitz_seq, self.n, self.dist)

    def lipschitz_matrix(self):
        return _lipschitz_lookup(self.lipschitz_seq, distance_matrix(self.n, self.dist))

    def __call__(self, X):
        return self.drift(X)


def lorenz96_model(n, forcing=L96_FORCING, cap=L96_CAP):
    """Untruncated Lorenz-96; Lipschitz data is that of the cap-``cap`` truncation."""
    _check_l96(np.zeros(n))
    F, _ = lipschitz_metadata(cap)

    def drift(X):
        return lorenz96_drift(X, forcing)

    return DriftModel(n=n, drift=drift, lipschitz_seq=F, name=f"lorenz96(F={forcing:g})")


def truncated_lorenz96_model(n, cap=L96_CAP, forcing=0.0):
    _check_l96(np.zeros(n))
    F, _ = lipschitz_metadata(cap)

    def drift(X):
        return lorenz96_truncated_drift(X, cap, forcing)

    return DriftModel(
        n=n, drift=drift, lipschitz_seq=F, name=f"lorenz96_truncated(C={cap:g})"
    )


@dataclass(frozen=True)
class ObsNoiseSpec:
    """Observation noise ``R R^T = epsilon * Omega^{-1}`` with diagonal ``Omega``."""

    epsilon: float
    omega: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        om = np.asarray(self.omega, dtype=float)
        if om.ndim == 2:
            if np.any(om != np.diag(np.diag(om))):
                raise ValueError("Omega must be diagonal")
            om = np.diag(om)
        if om.ndim != 1 or np.any(~(om > 0)):
            raise ValueError("Omega diagonal must be strictly positive")
        om = om.copy()
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def isotropic(cls, n, epsilon):
        return cls(epsilon, np.ones(n))

    @property
    def n(self):
        return self.omega.shape[0]

    @property
    def omega_min(self):
        return float(self.omega.min())

    @property
    def omega_max(self):
        return float(self.omega.max())

    def noise_std(self, dt):
        """Per-component std of the observation increment noise over ``dt``."""
        return np.sqrt(self.epsilon * dt / self.omega)


@dataclass(frozen=True)
class DominanceReport:
    q: float
    holds_dominance: bool
    holds_domination: bool
    min_c_F: float


def verify_dominance(phi, lipschitz_seq, c_F_candidate, dist=circ_distance):
    """Check diagonal dominance of ``phi`` and ``F_{d(i,j)} <= C_F phi_{i,j}``.

    ``min_c_F`` is the smallest constant for which the domination holds
    (``inf`` if some pair has ``F > 0`` over a zero taper entry).
    """
    E = np.asarray(phi, dtype=float)
    n = E.shape[0]
    d = getattr(phi, "distances", None)
    if d is None:
        d = distance_matrix(n, dist)
    F = _lipschitz_lookup(lipschitz_seq, d)
    q = localization_stats(E).q
    support = F > 0
    if np.any(support & (E == 0)):
        min_c_F = np.inf
    elif np.any(support):
        min_c_F = float(np.max(F[support] / E[support]))
    else:
        min_c_F = 0.0
    holds = bool(np.all(~support | (F <= c_F_candidate * E)))
    return DominanceReport(
        q=q, holds_dominance=q < 1.0, holds_domination=holds, min_c_F=min_c_F
    )


@dataclass(frozen=True)
class CanonicalSystem:
    """Drift and observation noise after rescaling by ``sigma`` and undoing ``H``."""

    drift: Callable = field(repr=False)
    r_tilde: np.ndarray
    scale_sigma: np.ndarray
    h_left_inverse: np.ndarray

    def transform_state(self, X):
        return np.asarray(X, dtype=float) / self.scale_sigma

    def inverse_transform_state(self, X):
        return np.asarray(X, dtype=float) * self.scale_sigma

    def transform_obs(self, dY):
        """Map raw observation increments ``dY`` to the canonical frame."""
        dY = np.asarray(dY, dtype=float)
        return (dY @ self.h_left_inverse.T) / self.scale_sigma

    def obs_spec(self, epsilon):
        """``ObsNoiseSpec`` with ``Omega = epsilon (R~ R~^T)^{-1}``; must be diagonal."""
        RR = self.r_tilde @ self.r_tilde.T
        omega = epsilon * np.linalg.inv(RR)
        off = omega - np.diag(np.diag(omega))
        if np.max(np.abs(off)) > 1e-12 * np.max(np.abs(omega)):
            raise ValueError("transformed observation noise is not diagonal")
        return ObsNoiseSpec(epsilon, np.diag(omega).copy())


def canonicalize(sigma, H, R, f):
    """Rescale a system with diffusion ``sqrt(2) sigma`` and observations ``H X``.

    ``sigma`` is a positive scalar, vector (diagonal) or diagonal matrix.
    ``H`` must be square and invertible.
    """
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("only square observation operators are supported")
    n = H.shape[0]
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 2:
        if np.any(s != np.diag(np.diag(s))):
            raise ValueError("sigma must be diagonal")
        s = np.diag(s)
    s = np.broadcast_to(s, (n,)).astype(float)
    if np.any(~(s > 0)):
        raise ValueError("sigma must be positive definite")
    try:
        if np.linalg.cond(H) > 1e14:
            raise np.linalg.LinAlgError("H is numerically singular")
        H_inv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"observation operator is singular: {exc}") from None

    r_tilde = (H_inv @ R) / s[:, None]

    def drift(X):
        return f(np.asarray(X, dtype=float) * s) / s

    return CanonicalSystem(drift=drift, r_tilde=r_tilde, scale_sigma=s, h_left_inverse=H_inv)
