"""scikit-learn style wrapper around the localized EnKBF.

The estimator is a stateful transformer: ``fit`` assimilates a block of
observation increments from a fresh ensemble, ``transform`` keeps assimilating
from where the last call stopped, and both return filtered means.

    >>> est = LocalizedEnKBF(epsilon=0.05).fit(dY)         # doctest: +SKIP
    >>> est.mean_trajectory_.shape                          # doctest: +SKIP
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import STREAM_ENSEMBLE, make_rng
from .filtering import Ensemble, FilterConfig, FilterRunner
from .locmat import build_localization
from .model import ObsNoiseSpec, lorenz96_model

__all__ = ["LocalizedEnKBF"]

# time span of increments averaged for the default initial mean
INIT_WINDOW = 0.1


class LocalizedEnKBF(TransformerMixin, BaseEstimator):
    """Localized deterministic ensemble Kalman-Bucy filter for Lorenz-96.

    Parameters
    ----------
    epsilon : float
        Observation noise level, ``R R^T = epsilon * Omega^{-1}``.
    n_members : int
        Ensemble size ``M``.
    localization_radius : float
        Gaspari-Cohn decorrelation length ``l`` in index units.
    dt : float
        Step between observation increments.
    forcing : float
        Lorenz-96 forcing of the filter model.
    omega : array_like or None
        Diagonal of ``Omega``; ``None`` means all ones.
    inflation : bool
        Keep the ``P^dagger (X^i - Xbar)`` term.
    stiffness_guard : bool
        Reject steps with ``dt * rate > 0.5``.
    init_mean : array_like or None
        Centre of the initial ensemble.  ``None`` uses the first
        ``INIT_WINDOW`` time units of increments divided by their duration.
    init_spread : float
        Standard deviation of the initial ``N(0, I)`` perturbations.
    random_state : int
        Seed of the ensemble initialization.
    record_stride : int
        Diagnostics and ``mean_trajectory_`` are kept every ``record_stride``
        steps.

    Attributes
    ----------
    ensemble_ : Ensemble
    mean_trajectory_ : ndarray of shape (records, n)
    diagnostics_ : FilterDiagnostics
    n_features_in_ : int
    n_steps_ : int
        Increments assimilated so far, across ``fit`` and ``transform``.
    """

    def __init__(self, epsilon=0.01, n_members=10, localization_radius=1.4, dt=1e-4,
                 forcing=8.0, omega=None, inflation=True, stiffness_guard=True,
                 init_mean=None, init_spread=1.0, random_state=0, record_stride=10):
        self.epsilon = epsilon
        self.n_members = n_members
        self.localization_radius = localization_radius
        self.dt = dt
        self.forcing = forcing
        self.omega = omega
        self.inflation = inflation
        self.stiffness_guard = stiffness_guard
        self.init_mean = init_mean
        self.init_spread = init_spread
        self.random_state = random_state
        self.record_stride = record_stride

    def _validate_params(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.n_members) < 2:
            raise ValueError(f"n_members must be >= 2, got {self.n_members}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.init_spread > 0:
            raise ValueError(f"init_spread must be > 0, got {self.init_spread}")
        if int(self.record_stride) < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")

    def _config(self, n):
        omega = np.ones(n) if self.omega is None else np.asarray(self.omega, dtype=float)
        return FilterConfig(
            phi=build_localization(n, self.localization_radius),
            obs=ObsNoiseSpec(self.epsilon, omega),
            dt=self.dt,
            drift=lorenz96_model(n, self.forcing),
            inflation_on=bool(self.inflation),
            stiffness_guard=bool(self.stiffness_guard),
        )

    def _initial_ensemble(self, X):
        n = X.shape[1]
        if self.init_mean is None:
            k = int(min(X.shape[0], max(1, round(INIT_WINDOW / self.dt))))
            center = X[:k].sum(axis=0) / (k * self.dt)
        else:
            center = np.asarray(self.init_mean, dtype=float)
            if center.shape != (n,):
                raise ValueError(f"init_mean has shape {center.shape}, expected ({n},)")
        rng = make_rng(self.random_state, STREAM_ENSEMBLE)
        return Ensemble(center + self.init_spread * rng.standard_normal((self.n_members, n)))

    def _run(self, X, init):
        runner = FilterRunner(self.config_, init, stride=int(self.record_stride))
        out = np.empty_like(X)
        for k in range(X.shape[0]):
            runner.advance(X[k])
            out[k] = runner.mean
        return runner, out

    def _store(self, runner):
        res = runner.result()
        self.ensemble_ = res.ensemble
        self.mean_trajectory_ = res.mean_trajectory
        self.diagnostics_ = res.diagnostics
        self.record_steps_ = res.record_steps

    def _fit(self, X):
        self._validate_params()
        X = check_array(X, dtype=np.float64, ensure_min_features=4)
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config(X.shape[1])
        runner, out = self._run(X, self._initial_ensemble(X))
        self._store(runner)
        self.n_steps_ = X.shape[0]
        return out

    def fit(self, X, y=None):
        """Assimilate increments ``X`` of shape (steps, n) from a fresh ensemble."""
        self._fit(X)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        """Fit and return the filtered mean after each step, assimilating once."""
        return self._fit(X)

    def transform(self, X):
        """Continue assimilating ``X``; returns the mean after each step.

        The estimator state (``ensemble_``, diagnostics) advances, so calling
        ``transform`` twice on the same block assimilates it twice.
        """
        check_is_fitted(self, "ensemble_")
        X = check_array(X, dtype=np.float64, ensure_min_features=4)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the filter was fitted with "
                f"{self.n_features_in_}"
            )
        runner, out = self._run(X, self.ensemble_)
        self._store(runner)
        self.n_steps_ += X.shape[0]
        return out

    def predict(self, X):
        """Filtered means for ``X`` without changing the fitted state."""
        check_is_fitted(self, "ensemble_")
        X = check_array(X, dtype=np.float64, ensure_min_features=4)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the filter was fitted with "
                f"{self.n_features_in_}"
            )
        _, out = self._run(X, self.ensemble_)
        return out
