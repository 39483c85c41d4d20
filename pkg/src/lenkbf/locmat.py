"""Localization matrices and the dense matrix utilities used by the filter.

The taper is built entrywise from the Gaspari-Cohn compactly supported
quintic evaluated at ``d(i, j) / l``, where ``d`` is an index distance and
``l`` the decorrelation length.  Everything here is a pure function of its
inputs; matrices are stored densely.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_same_shape, check_square
from .exceptions import SingularCovarianceError

__all__ = [
    "LocalizationMatrix",
    "LocalizationStats",
    "NormBundle",
    "gaspari_cohn",
    "circ_distance",
    "linear_distance",
    "distance_matrix",
    "build_localization",
    "localization_stats",
    "schur_localize",
    "diag_inverse",
    "default_diag_floor",
    "norms",
    "op_norm",
]

# exact eigensolve up to this size, power iteration above
OP_NORM_DENSE_MAX = 64


def gaspari_cohn(x):
    """Gaspari-Cohn fifth-order piecewise rational taper.

    Parameters
    ----------
    x : float or array_like
        Nonnegative scaled distance(s).

    Returns
    -------
    float or ndarray
        Values in ``[0, 1]``; exactly 1 at 0 and exactly 0 for ``x >= 2``.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ValueError("gaspari_cohn is defined for x >= 0; pass |x|")
    out = np.zeros_like(x)

    inner = x <= 1.0
    a = x[inner]
    out[inner] = -0.25 * a**5 + 0.5 * a**4 + 0.625 * a**3 - (5.0 / 3.0) * a**2 + 1.0

    outer = (x > 1.0) & (x < 2.0)
    b = x[outer]
    out[outer] = (
        b**5 / 12.0
        - 0.5 * b**4
        + 0.625 * b**3
        + (5.0 / 3.0) * b**2
        - 5.0 * b
        + 4.0
        - 2.0 / (3.0 * b)
    )
    # rounding can leave ~-1e-16 just below x = 2
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out


def _check_index(i, n):
    if int(i) != i or not 1 <= i <= n:
        raise IndexError(f"index {i} outside 1..{n}")


def circ_distance(i, j, n):
    """Distance between 1-based indices ``i`` and ``j`` on a ring of ``n`` sites."""
    _check_index(i, n)
    _check_index(j, n)
    return int(min(abs(i - j), abs(i + n - j), abs(j + n - i)))


def linear_distance(i, j, n):
    """Distance ``|i - j|`` between 1-based indices on a segment of ``n`` sites."""
    _check_index(i, n)
    _check_index(j, n)
    return int(abs(i - j))


def distance_matrix(n, dist=circ_distance):
    """Integer matrix of pairwise index distances (0-based rows/cols)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if dist is circ_distance or dist == "circular":
        idx = np.arange(n)
        d = np.abs(idx[:, None] - idx[None, :])
        return np.minimum(d, n - d)
    if dist is linear_distance or dist == "linear":
        idx = np.arange(n)
        return np.abs(idx[:, None] - idx[None, :])
    if isinstance(dist, str):
        raise ValueError(f"unknown distance {dist!r}")
    out = np.empty((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            out[i, j] = dist(i + 1, j + 1, n)
    return out


@dataclass(frozen=True)
class LocalizationMatrix:
    """Symmetric, nonnegative, unit-diagonal taper matrix.

    Attributes
    ----------
    entries : ndarray of shape (n, n)
    radius_l : float or None
        Decorrelation length used to build the taper; ``None`` for test
        tapers given explicitly.
    """

    entries: np.ndarray
    radius_l: float = None
    distances: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        E = check_square(self.entries, "entries")
        if not np.array_equal(E, E.T):
            raise ValueError("localization matrix must be exactly symmetric")
        if np.any(np.diag(E) != 1.0):
            raise ValueError("localization matrix must have a unit diagonal")
        if np.any(E < 0):
            raise ValueError("localization matrix entries must be nonnegative")
        E = E.copy()
        E.setflags(write=False)
        object.__setattr__(self, "entries", E)

    @property
    def n(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def ones(cls, n):
        return cls(np.ones((n, n)))

    def stats(self):
        return localization_stats(self)


@dataclass(frozen=True)
class LocalizationStats:
    c_phi: float
    q: float
    diag_dominant: bool


@dataclass(frozen=True)
class NormBundle:
    max_abs: float
    one_norm: float
    min_diag: float
    op_norm: float


def build_localization(n, l, dist=circ_distance, taper=gaspari_cohn):
    """Taper ``phi[i, j] = taper(d(i, j) / l)``.

    ``taper`` is exposed so the verification suites can run against a
    mutated function; production callers leave it alone.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not l > 0:
        raise ValueError(f"localization radius must be > 0, got {l}")
    d = distance_matrix(n, dist)
    phi = np.asarray(taper(d / float(l)), dtype=float)
    # force exact symmetry and unit diagonal regardless of taper rounding
    phi = np.triu(phi) + np.triu(phi, 1).T
    np.fill_diagonal(phi, 1.0)
    return LocalizationMatrix(phi, radius_l=float(l), distances=d)


def localization_stats(phi):
    E = np.asarray(phi, dtype=float)
    rows = E.sum(axis=1)
    off = rows - np.diag(E)
    c_phi = float(rows.max())
    q = float(off.max())
    return LocalizationStats(c_phi=c_phi, q=q, diag_dominant=q < 1.0)


def schur_localize(P, phi):
    """Entrywise product ``P o phi``."""
    P = check_square(P, "P")
    E = np.asarray(phi, dtype=float)
    check_same_shape(P, E, ("P", "phi"))
    return P * E


def default_diag_floor(P):
    return 1e-12 * max(1.0, float(np.max(np.abs(np.diagonal(P)))))


def diag_inverse(P, floor=None):
    """Diagonal inverse: reciprocal of the diagonal of ``P``, zero elsewhere.

    Raises
    ------
    SingularCovarianceError
        If any diagonal entry is ``<= floor`` (default relative floor
        ``1e-12 * max(1, max|diag P|)``).
    """
    P = check_square(P, "P")
    d = np.diag(P)
    if floor is None:
        floor = default_diag_floor(P)
    bad = np.flatnonzero(~(d > floor))
    if bad.size:
        k = int(bad[0])
        raise SingularCovarianceError(k, d[k], floor)
    return np.diag(1.0 / d)


def _power_iteration(B, tol=1e-10, max_iter=10_000):
    # B symmetric PSD; deterministic start vector
    n = B.shape[0]
    v = np.ones(n) / np.sqrt(n) + np.linspace(0.0, 1e-3, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ B @ v)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def op_norm(A):
    """l2 operator norm ``sqrt(lambda_max(A^T A))``."""
    A = np.asarray(A, dtype=float)
    B = A.T @ A
    if B.shape[0] <= OP_NORM_DENSE_MAX:
        lam = float(np.linalg.eigvalsh(B)[-1])
    else:
        lam = _power_iteration(B)
    return float(np.sqrt(max(lam, 0.0)))


def norms(A):
    A = check_square(A, "A")
    return NormBundle(
        max_abs=float(np.max(np.abs(A))),
        one_norm=float(np.max(np.abs(A).sum(axis=0))),
        min_diag=float(np.min(np.diag(A))),
        op_norm=op_norm(A),
    )
