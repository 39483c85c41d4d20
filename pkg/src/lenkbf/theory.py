"""Closed-form stability bounds, Riccati solution, Lyapunov weights and rates.

These are used both as runtime monitors (covariance bounds, the alpha/beta
rates) and as oracles in the verification suites.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .locmat import localization_stats

__all__ = [
    "StabilityBounds",
    "LyapunovWeights",
    "RateDiagnostics",
    "stability_bounds",
    "riccati_roots",
    "riccati_closed_form",
    "riccati_rk4",
    "lyapunov_weights",
    "lyapunov_weights_mc",
    "alpha_beta",
    "rho_constant",
]


@dataclass(frozen=True)
class StabilityBounds:
    lambda_max: float
    lambda_min: float
    t_star_upper: float
    t_star_lower: float


def stability_bounds(c_f, omega_min, omega_max, c_phi, epsilon):
    """Upper/lower covariance levels and the times after which they apply.

    ``lambda_max = (2 eps / omega_min) * sqrt(c_f**2 + 3 omega_min / eps)``
    and ``lambda_min = eps / (3 lambda_max omega_max c_phi)``; both are
    ``Theta(sqrt(eps))`` for fixed ``c_f`` and ``omega``.
    """
    for name, v in (
        ("omega_min", omega_min),
        ("omega_max", omega_max),
        ("c_phi", c_phi),
        ("epsilon", epsilon),
    ):
        if not v > 0:
            raise ValueError(f"{name} must be > 0, got {v}")
    if c_f < 0:
        raise ValueError(f"c_f must be >= 0, got {c_f}")
    lam_max = (2.0 * epsilon / omega_min) * math.sqrt(c_f**2 + 3.0 * omega_min / epsilon)
    lam_min = epsilon / (3.0 * lam_max * omega_max * c_phi)
    t_up = omega_min * epsilon / lam_max
    t_low = t_up + 3.0 * lam_min
    return StabilityBounds(lam_max, lam_min, t_up, t_low)


def riccati_roots(a, b, c, epsilon):
    """Roots ``y_- < y_+`` of ``-(c/eps) y**2 + b y + a = 0``."""
    if c == 0 or epsilon <= 0:
        raise ValueError("need c != 0 and epsilon > 0")
    center = b * epsilon / (2.0 * c)
    disc = (b * epsilon / (2.0 * c)) ** 2 + a * epsilon / c
    if disc <= 0:
        raise ValueError("Riccati right-hand side has no distinct real roots")
    half = math.sqrt(disc)
    return center - half, center + half


def riccati_closed_form(y0, a, b, c, epsilon, t):
    """Solution of ``dy/dt = -(c/eps) y**2 + b y + a`` at time ``t``.

    Uses the log-ratio identity
    ``(y - y_-)/(y - y_+) = exp((c/eps) t (y_+ - y_-)) (y0 - y_-)/(y0 - y_+)``,
    rearranged so large ``t`` does not overflow.
    """
    y_lo, y_hi = riccati_roots(a, b, c, epsilon)
    if y0 == y_hi:
        raise ValueError("degenerate initial value y0 == y_+")
    if y0 == y_lo:
        return float(y_lo)
    k = (c / epsilon) * (y_hi - y_lo)
    # s = 1 / ratio(t)
    s = math.exp(-k * t) * (y0 - y_hi) / (y0 - y_lo)
    return float((y_hi - y_lo * s) / (1.0 - s))


def riccati_rk4(y0, a, b, c, epsilon, t, steps=20_000):
    """Independent RK4 integration of the same scalar Riccati ODE."""

    def g(y):
        return -(c / epsilon) * y * y + b * y + a

    h = t / steps
    y = float(y0)
    for _ in range(steps):
        k1 = g(y)
        k2 = g(y + 0.5 * h * k1)
        k3 = g(y + 0.5 * h * k2)
        k4 = g(y + h * k3)
        y += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


@dataclass(frozen=True)
class LyapunovWeights:
    i: int
    v: np.ndarray
    q: float


def _check_q(phi, q):
    E = np.asarray(phi, dtype=float)
    q_phi = localization_stats(E).q
    if not q < 1.0:
        raise ValueError(f"q must be < 1, got {q}")
    if q < q_phi - 1e-15:
        raise ValueError(f"q={q} is below the largest off-diagonal row sum {q_phi}")
    return E


def _solve_fraction(A, b):
    # Gauss-Jordan elimination in exact rational arithmetic
    n = len(b)
    M = [list(row) + [b[k]] for k, row in enumerate(A)]
    for c in range(n):
        p = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[p] = M[p], M[c]
        piv = M[c][c]
        M[c] = [x / piv for x in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    return [M[r][n] for r in range(n)]


def lyapunov_weights(phi, q, i, exact=False):
    """Weights ``v^i`` from the first-step equations of the killed index chain.

    Solves, for every ``j``,
    ``(1 - q + s_j) v_j - sum_{l != j} phi[j, l] v_l = (1 - q) [j == i]``
    where ``s_j`` is the off-diagonal row sum of ``phi``.  ``i`` is 0-based.

    With ``exact=True`` the system is solved in rational arithmetic; entries
    may then be :class:`fractions.Fraction` (floats are taken at their exact
    binary value) and ``v`` is an object array of fractions.
    """
    if exact:
        F = [[Fraction(x) for x in row] for row in np.asarray(phi, dtype=object)]
        qf = Fraction(q)
        _check_q(np.asarray(F, dtype=float), float(qf))
        n = len(F)
        if not 0 <= i < n:
            raise IndexError(f"index {i} outside 0..{n - 1}")
        A = [
            [
                (1 - qf + sum(F[j][l] for l in range(n) if l != j)) if j == k else -F[j][k]
                for k in range(n)
            ]
            for j in range(n)
        ]
        rhs = [(1 - qf) if j == i else Fraction(0) for j in range(n)]
        v = np.array(_solve_fraction(A, rhs), dtype=object)
        return LyapunovWeights(i=i, v=v, q=float(qf))
    E = _check_q(phi, q)
    n = E.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"index {i} outside 0..{n - 1}")
    off = E - np.diag(np.diag(E))
    A = np.diag(1.0 - q + off.sum(axis=1)) - off
    rhs = np.zeros(n)
    rhs[i] = 1.0 - q
    v = np.linalg.solve(A, rhs)
    return LyapunovWeights(i=i, v=v, q=float(q))


def lyapunov_weights_mc(phi, q, i, samples, seed=0):
    """Monte-Carlo estimate of the expected number of visits to ``i``.

    The chain jumps ``j -> l`` with probability ``phi[j, l] / q`` and stays
    otherwise; it is killed after a geometric number ``T`` of steps with
    ``P(T = k) = (1 - q) q**(k - 1)``.  Returns ``(mean, stderr)`` per start.
    Note that the expectation is ``v / (1 - q)`` with ``v`` from
    :func:`lyapunov_weights`.
    """
    E = _check_q(phi, q)
    n = E.shape[0]
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 0 <= i < n:
        raise IndexError(f"index {i} outside 0..{n - 1}")
    off = E - np.diag(np.diag(E))
    if q > 0:
        trans = off / q
        trans[np.diag_indices(n)] = 1.0 - off.sum(axis=1) / q
    else:
        trans = np.eye(n)
    cum = np.cumsum(trans, axis=1)
    cum[:, -1] = 1.0
    rng = np.random.default_rng(seed)

    mean = np.empty(n)
    se = np.empty(n)
    for j in range(n):
        state = np.full(samples, j)
        alive = np.ones(samples, dtype=bool)
        visits = np.zeros(samples)
        while alive.any():
            visits[alive] += state[alive] == i
            # survive to the next index with probability q
            alive &= rng.random(samples) < q
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            u = rng.random(idx.size)
            rows = cum[state[idx]]
            state[idx] = (u[:, None] >= rows).sum(axis=1)
        mean[j] = visits.mean()
        se[j] = visits.std(ddof=1) / math.sqrt(samples) if samples > 1 else np.inf
    return mean, se


@dataclass(frozen=True)
class RateDiagnostics:
    alpha_t: float
    beta_t: float


def alpha_beta(p_min, p_max, rho, c_f, c_phi, omega_max, epsilon):
    """Contraction rate ``alpha`` and forcing level ``beta`` of the error bound."""
    alpha = 2.0 * rho * p_min / epsilon - c_f - 1.0
    beta = c_f**2 * p_max + 2.0 + c_phi**2 * omega_max * p_max**2 / epsilon
    return RateDiagnostics(float(alpha), float(beta))


def rho_constant(phi):
    """``1 - q`` for diagonally dominant ``phi``, else its smallest eigenvalue."""
    E = np.asarray(phi, dtype=float)
    st = localization_stats(E)
    if st.diag_dominant:
        return 1.0 - st.q
    return float(np.linalg.eigvalsh(E)[0])
