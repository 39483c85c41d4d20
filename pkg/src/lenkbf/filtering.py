"""Localized deterministic ensemble Kalman-Bucy filter.

Each particle follows

    dX^i = f(X^i) dt + P^dagger (X^i - Xbar) dt
           - (1 / 2 eps) P^L Omega (X^i dt + Xbar dt - 2 dY)

where ``P^L = P o phi`` is the tapered sample covariance and ``P^dagger``
its diagonal inverse.  Time stepping is explicit Euler with the ensemble
statistics frozen at the start of each step.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import symmetrize
from .dynamics import OBS_MAGIC, STREAM_ENSEMBLE, ObservationRecord, make_rng, read_stream
from .exceptions import BlowUpError, SingularCovarianceError, StiffnessError, StreamFormatError
from .locmat import LocalizationMatrix, localization_stats
from .model import ObsNoiseSpec
from .theory import alpha_beta, rho_constant, stability_bounds

logger = logging.getLogger(__name__)

__all__ = [
    "Ensemble",
    "FilterConfig",
    "FilterDiagnostics",
    "FilterResult",
    "ensemble_stats",
    "init_ensemble",
    "filter_step",
    "mean_increment",
    "cov_ode_rhs",
    "spread_rhs",
    "run_filter",
    "FilterRunner",
]

STIFFNESS_LIMIT = 0.5


def ensemble_stats(particles):
    """Sample mean and unbiased (``M - 1``) sample covariance of ``(M, n)`` particles."""
    X = np.asarray(particles, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"particles must be (M, n), got shape {X.shape}")
    M = X.shape[0]
    if M < 2:
        raise ValueError(f"need at least 2 particles, got {M}")
    mean = np.add.reduce(X, axis=0) / M
    A = X - mean
    cov = symmetrize(A.T @ A / (M - 1))
    return mean, cov


class Ensemble:
    """``M`` particles with their cached mean and covariance.

    Treated as immutable: :func:`filter_step` returns a new instance.
    """

    __slots__ = ("particles", "mean", "cov")

    def __init__(self, particles):
        X = np.array(particles, dtype=float)
        self.mean, self.cov = ensemble_stats(X)
        X.setflags(write=False)
        self.particles = X

    @property
    def m(self):
        return self.particles.shape[0]

    @property
    def n(self):
        return self.particles.shape[1]

    @property
    def anomalies(self):
        return self.particles - self.mean

    def __repr__(self):
        return f"Ensemble(m={self.m}, n={self.n})"


def init_ensemble(x_est, m, seed=0, spread=1.0):
    """``x_est + spread * N(0, I)`` draws; ``||P_0||_min > 0`` almost surely for ``m >= 2``."""
    x_est = np.asarray(x_est, dtype=float)
    rng = make_rng(seed, STREAM_ENSEMBLE)
    return Ensemble(x_est + spread * rng.standard_normal((m, x_est.shape[0])))


@dataclass(frozen=True)
class FilterConfig:
    """Everything a filter step needs besides the ensemble and the increment.

    ``drift`` is any callable acting on the last axis; when it carries a
    ``c_f`` attribute (e.g. a :class:`~lenkbf.model.DriftModel`) the rate
    diagnostics are filled in.
    """

    phi: LocalizationMatrix
    obs: ObsNoiseSpec
    dt: float
    drift: Callable = field(repr=False)
    inflation_on: bool = True
    diag_floor: float = None
    stiffness_guard: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.phi.n != self.obs.n:
            raise ValueError(
                f"phi is {self.phi.n}x{self.phi.n} but Omega has {self.obs.n} entries"
            )
        # phi with Omega folded into its columns, reused by every gain evaluation
        object.__setattr__(self, "_phi_omega", self.phi.entries * self.obs.omega[None, :])
        object.__setattr__(self, "_band", _band_structure(self.phi, self.obs.omega))

    @property
    def n(self):
        return self.phi.n

    @property
    def epsilon(self):
        return self.obs.epsilon

    @property
    def c_f(self):
        return getattr(self.drift, "c_f", None)


def _as_increment(obs_rec):
    if isinstance(obs_rec, ObservationRecord):
        return obs_rec.delta_y
    return np.asarray(obs_rec, dtype=float)


def _gain(cov, cfg):
    # P^L Omega (Omega diagonal, applied on the right)
    return cov * cfg._phi_omega


def _band_structure(phi, omega):
    """Circulant offsets carrying the nonzero taper entries, if there are few.

    Returns ``(shift, band)`` with ``shift[k, i] = (i + off_k) % n`` and
    ``band[k, i] = phi[i, shift[k, i]] * omega[shift[k, i]]``, or ``None`` when
    a dense product is cheaper.
    """
    E = np.asarray(phi, dtype=float)
    n = E.shape[0]
    rows = np.arange(n)
    offsets = [k for k in range(n) if np.any(E[rows, (rows + k) % n] != 0)]
    if 4 * len(offsets) > n:
        return None
    shift = (rows[None, :] + np.asarray(offsets)[:, None]) % n
    band = E[rows[None, :], shift] * omega[shift]
    return shift, band


class _Stats:
    """Mean, covariance diagonal and gain of an ensemble, dense or banded."""

    __slots__ = ("mean", "anom", "diag", "gain", "banded")

    def __init__(self, X, cfg):
        M = X.shape[0]
        if M < 2:
            raise ValueError(f"need at least 2 particles, got {M}")
        self.mean = np.add.reduce(X, axis=0) / M
        self.anom = A = X - self.mean
        self.banded = cfg._band is not None
        if self.banded:
            shift, band = cfg._band
            cov_band = np.einsum("mi,mki->ki", A, A[:, shift]) / (M - 1)
            self.diag = cov_band[0]
            self.gain = cov_band * band
        else:
            cov = symmetrize(A.T @ A / (M - 1))
            self.diag = cov.diagonal()
            self.gain = _gain(cov, cfg)

    def apply(self, V, cfg):
        """Rows of ``V`` mapped by the gain: ``V @ (P^L Omega)^T``."""
        if self.banded:
            return np.einsum("ki,mki->mi", self.gain, V[:, cfg._band[0]])
        return V @ self.gain.T

    def col_abs_max(self, cfg):
        if self.banded:
            n = self.diag.shape[0]
            cols = np.bincount(
                cfg._band[0].ravel(), weights=np.abs(self.gain).ravel(), minlength=n
            )
            return cols.max()
        return np.abs(self.gain).sum(axis=0).max()


def _diag_checked(d, cfg):
    lo, hi = d.min(), d.max()
    floor = cfg.diag_floor
    if floor is None:
        floor = 1e-12 * max(1.0, hi, -lo)
    if not lo > floor:
        k = int(np.flatnonzero(~(d > floor))[0])
        raise SingularCovarianceError(k, d[k], floor)
    return d


def _advance(X, st, dy, cfg, fX=None):
    """Euler update of all particles from frozen statistics; returns (X_new, rate)."""
    dt = cfg.dt
    eps = cfg.obs.epsilon
    d = _diag_checked(st.diag, cfg)
    rate = max(st.col_abs_max(cfg) / eps, 1.0 / d.min())
    if cfg.stiffness_guard and dt * rate > STIFFNESS_LIMIT:
        raise StiffnessError(dt, rate, STIFFNESS_LIMIT)
    if fX is None:
        fX = cfg.drift(X)
    innov = (X + st.mean) * dt - 2.0 * dy
    X_new = X + dt * fX - (0.5 / eps) * st.apply(innov, cfg)
    if cfg.inflation_on:
        X_new += dt * st.anom / d
    return X_new, rate


def filter_step(ens, obs_rec, cfg):
    """Advance every particle by one step of length ``cfg.dt``."""
    dy = _as_increment(obs_rec)
    if dy.shape != (ens.n,):
        raise ValueError(f"increment has shape {dy.shape}, expected ({ens.n},)")
    X_new, _ = _advance(ens.particles, _Stats(ens.particles, cfg), dy, cfg)
    if not np.all(np.isfinite(X_new)):
        raise BlowUpError(None, "ensemble")
    return Ensemble(X_new)


def mean_increment(ens, obs_rec, cfg):
    """Change of the ensemble mean over one step: ``fbar dt - (1/eps) P^L Omega (Xbar dt - dY)``."""
    dy = _as_increment(obs_rec)
    _diag_checked(ens.cov.diagonal(), cfg)
    K = _gain(ens.cov, cfg)
    fbar = np.add.reduce(cfg.drift(ens.particles), axis=0) / ens.m
    return fbar * cfg.dt - (K @ (ens.mean * cfg.dt - dy)) / cfg.obs.epsilon


def cov_ode_rhs(ens, cfg):
    """Time derivative of the sample covariance along the deterministic spread ODE."""
    P = ens.cov
    d = _diag_checked(P.diagonal(), cfg)
    A = ens.anomalies
    fX = cfg.drift(ens.particles)
    G = fX - np.add.reduce(fX, axis=0) / ens.m
    F = A.T @ G / (ens.m - 1)
    rhs = F + F.T
    if cfg.inflation_on:
        Pdag_P = P / d[:, None]
        rhs = rhs + Pdag_P + Pdag_P.T
    K = _gain(P, cfg)
    rhs = rhs - (0.5 / cfg.obs.epsilon) * (K @ P + (K @ P).T)
    return symmetrize(rhs)


def spread_rhs(X, cfg):
    """Right-hand side of the particle ODE with observations switched off.

    Used as the finite-difference oracle for :func:`cov_ode_rhs`.
    """
    X = np.asarray(X, dtype=float)
    st = _Stats(X, cfg)
    d = _diag_checked(st.diag, cfg)
    out = cfg.drift(X) - (0.5 / cfg.obs.epsilon) * st.apply(X + st.mean, cfg)
    if cfg.inflation_on:
        out = out + st.anom / d
    return out


@dataclass
class FilterDiagnostics:
    """Per-record covariance levels and rates, plus run-wide counters."""

    step: np.ndarray
    t: np.ndarray
    p_max: np.ndarray
    p_min: np.ndarray
    alpha_t: np.ndarray
    beta_t: np.ndarray
    stiffness: np.ndarray
    bound_violations: dict = field(default_factory=dict)
    max_dagger_defect: float = 0.0

    COLUMNS = ("step", "t", "p_max", "p_min", "alpha_t", "beta_t", "stiffness")

    def as_columns(self):
        return {c: getattr(self, c) for c in self.COLUMNS}


@dataclass
class FilterResult:
    mean_trajectory: np.ndarray
    diagnostics: FilterDiagnostics
    ensemble: Ensemble
    record_steps: np.ndarray


class FilterRunner:
    """Stateful driver: feed increments one at a time, collect strided records.

    Holds the ensemble as plain arrays to keep the per-step overhead low;
    the arithmetic is the same as :func:`filter_step`.
    """

    def __init__(self, cfg, init, stride=10, bound_check_after=None, p0_max=None):
        self.cfg = cfg
        self.stride = int(stride)
        self._init = init
        self.X = np.array(init.particles, dtype=float)
        self._st = _Stats(self.X, cfg)
        self.step = 0
        self._rows = []
        self._means = []
        self._steps = []
        self.max_dagger_defect = 0.0
        self.violations = {"p_max_above_bound": 0, "p_min_nonpositive": 0}

        c_f = cfg.c_f
        st = localization_stats(cfg.phi)
        self._c_phi = st.c_phi
        self._rho = rho_constant(cfg.phi)
        self._c_f = c_f
        self.bounds = None
        if c_f is not None:
            self.bounds = stability_bounds(
                c_f, cfg.obs.omega_min, cfg.obs.omega_max, st.c_phi, cfg.obs.epsilon
            )
        if p0_max is None:
            p0_max = float(np.max(self._st.diag))
        self.p0_max = p0_max
        if bound_check_after is None and self.bounds is not None:
            bound_check_after = 10.0 * self.bounds.t_star_lower
        self.bound_check_after = bound_check_after
        self._record(rate=np.nan)

    @property
    def t(self):
        return self.step * self.cfg.dt

    @property
    def mean(self):
        """Current ensemble mean (read-only view)."""
        m = self._st.mean.view()
        m.flags.writeable = False
        return m

    @property
    def p_max_bound(self):
        if self.bounds is None:
            return np.inf
        return 1.2 * max(self.p0_max, self.bounds.lambda_max)

    def _record(self, rate):
        d = self._st.diag
        p_max = float(d.max())
        p_min = float(d.min())
        if self._c_f is not None:
            r = alpha_beta(
                p_min, p_max, self._rho, self._c_f, self._c_phi,
                self.cfg.obs.omega_max, self.cfg.obs.epsilon,
            )
            a, b = r.alpha_t, r.beta_t
        else:
            a = b = np.nan
        self._rows.append((self.step, self.t, p_max, p_min, a, b, rate))
        self._means.append(self._st.mean.copy())
        self._steps.append(self.step)

    def _check_bounds(self, d):
        if self.bound_check_after is not None and self.t > self.bound_check_after:
            if d.max() > self.p_max_bound:
                self.violations["p_max_above_bound"] += 1
            if d.min() <= 0:
                self.violations["p_min_nonpositive"] += 1
        # [P^dagger P]_{ii} = 1
        defect = float(np.max(np.abs(d * (1.0 / d) - 1.0)))
        if defect > self.max_dagger_defect:
            self.max_dagger_defect = defect

    def advance(self, dy):
        try:
            X_new, rate = _advance(self.X, self._st, dy, self.cfg)
        except SingularCovarianceError as exc:
            exc.step = self.step
            exc.args = (f"{exc.args[0]} at step {self.step}",)
            raise
        except StiffnessError as exc:
            exc.step = self.step
            exc.args = (f"{exc.args[0]} [step {self.step}]",)
            raise
        if not np.all(np.isfinite(X_new)):
            raise BlowUpError(self.step + 1, "ensemble")
        self.X = X_new
        self._st = _Stats(X_new, self.cfg)
        self.step += 1
        self._check_bounds(self._st.diag)
        if self.step % self.stride == 0:
            self._record(rate)

    def result(self):
        cols = list(zip(*self._rows)) if self._rows else [[]] * 7
        arr = [np.asarray(c, dtype=float) for c in cols]
        diag = FilterDiagnostics(
            step=arr[0].astype(np.int64),
            t=arr[1],
            p_max=arr[2],
            p_min=arr[3],
            alpha_t=arr[4],
            beta_t=arr[5],
            stiffness=arr[6],
            bound_violations=dict(self.violations),
            max_dagger_defect=self.max_dagger_defect,
        )
        return FilterResult(
            mean_trajectory=np.asarray(self._means),
            diagnostics=diag,
            ensemble=self._init if self.step == 0 else Ensemble(self.X),
            record_steps=np.asarray(self._steps, dtype=np.int64),
        )


def _load_increments(stream, cfg):
    if isinstance(stream, (str, os.PathLike)):
        header, records = read_stream(stream, magic=OBS_MAGIC)
        if header.n != cfg.n:
            raise StreamFormatError(f"stream n={header.n} but filter n={cfg.n}")
        if not np.isclose(header.dt, cfg.dt, rtol=1e-12, atol=0):
            raise StreamFormatError(f"stream dt={header.dt} but filter dt={cfg.dt}")
        if not np.isclose(header.epsilon, cfg.obs.epsilon, rtol=1e-12, atol=0):
            raise StreamFormatError(
                f"stream epsilon={header.epsilon} but filter epsilon={cfg.obs.epsilon}"
            )
        return records
    records = np.asarray(stream, dtype=float)
    if records.size == 0:
        return records.reshape(0, cfg.n)
    if records.ndim != 2 or records.shape[1] != cfg.n:
        raise StreamFormatError(f"increments must be (steps, {cfg.n}), got {records.shape}")
    return records


def run_filter(stream, cfg, init, stride=10):
    """Assimilate every increment of ``stream`` starting from ``init``.

    Parameters
    ----------
    stream : path or array_like of shape (steps, n)
        Observation stream file or in-memory increments.
    cfg : FilterConfig
    init : Ensemble
    stride : int
        Record the mean and diagnostics every ``stride`` steps (and at step 0).

    Returns
    -------
    FilterResult
    """
    records = _load_increments(stream, cfg)
    if init.n != cfg.n:
        raise ValueError(f"ensemble n={init.n} but filter n={cfg.n}")
    runner = FilterRunner(cfg, init, stride=stride)
    for k in range(records.shape[0]):
        runner.advance(np.asarray(records[k]))
    return runner.result()
