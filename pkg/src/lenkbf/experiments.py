"""Twin experiments, error metrics and the three scaling sweeps.

A *cell* is one grid point of a sweep (one epsilon, one dimension, or the
single long run of a time sweep); each cell runs ``repeats`` independent
twin experiments whose seeds are derived from ``base_seed`` and the cell
and repeat indices, so any cell can be rerun in isolation.
"""

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import make_rng, spinup_init, STREAM_OBS, STREAM_TRUTH
from .exceptions import ConfigError
from .filtering import FilterConfig, FilterRunner, init_ensemble
from .locmat import build_localization, localization_stats
from .model import ObsNoiseSpec, lorenz96_model
from .theory import stability_bounds

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentSpec",
    "MetricsRecord",
    "RunOutput",
    "SweepResult",
    "cell_seed",
    "twin_run",
    "error_series",
    "metrics",
    "default_burn_in",
    "loglog_slope",
    "linear_fit",
    "log_fit",
    "eps_sweep",
    "dim_sweep",
    "time_sweep",
    "single_run",
    "run_experiment",
    "stiffness_estimate",
]

SCENARIOS = ("eps-sweep", "dim-sweep", "time-sweep", "single")


@dataclass
class ExperimentSpec:
    """Experiment description; list-valued fields are sweep grids.

    Only the grid matching ``scenario`` is swept; other grids contribute
    their first entry.
    """

    scenario: str = "single"
    epsilon: list = field(default_factory=lambda: [0.01])
    n: list = field(default_factory=lambda: [40])
    T: list = field(default_factory=lambda: [20.0])
    m: int = 10
    dt: float = 1e-4
    steps: int = 200_000
    repeats: int = 1
    base_seed: int = 0
    l: float = 1.4
    output_dir: str = "results"
    burn_in: float = None
    stride: int = 10
    forcing: float = 8.0
    spinup_time: float = 10.0
    component: int = 11
    inflation: bool = True
    init_spread: float = 1.0
    threads: int = 1

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"must be one of {SCENARIOS}, got {self.scenario!r}",
                              field="scenario")
        for name in ("epsilon", "n", "T"):
            grid = getattr(self, name)
            if not grid:
                raise ConfigError("grid must be non-empty", field=name)
        if any(not e > 0 for e in self.epsilon):
            raise ConfigError("values must be > 0", field="epsilon")
        if any(int(v) != v or v < 4 for v in self.n):
            raise ConfigError("values must be integers >= 4", field="n")
        if any(not t > 0 for t in self.T):
            raise ConfigError("values must be > 0", field="T")
        if not self.dt > 0:
            raise ConfigError(f"must be > 0, got {self.dt}", field="dt")
        if int(self.steps) < 1:
            raise ConfigError(f"must be >= 1, got {self.steps}", field="steps")
        if int(self.repeats) < 1:
            raise ConfigError(f"must be >= 1, got {self.repeats}", field="repeats")
        if self.scenario == "time-sweep" and self.repeats < 2:
            raise ConfigError("time-sweep needs repeats >= 2", field="repeats")
        if int(self.m) < 2:
            raise ConfigError(f"must be >= 2, got {self.m}", field="m")
        if not self.l > 0:
            raise ConfigError(f"must be > 0, got {self.l}", field="l")
        if int(self.stride) < 1:
            raise ConfigError(f"must be >= 1, got {self.stride}", field="stride")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError(f"must be >= 0, got {self.burn_in}", field="burn_in")
        if not 1 <= self.component <= min(self.n):
            raise ConfigError(f"must lie in 1..{min(self.n)}", field="component")
        if not self.init_spread > 0:
            raise ConfigError("must be > 0", field="init_spread")
        rate = stiffness_estimate(self)
        if self.dt * rate > 0.5:
            raise ConfigError(
                f"dt={self.dt:g} violates the stiffness limit for "
                f"epsilon={min(self.epsilon):g} (estimated rate {rate:.3g}); "
                f"use dt <= {0.5 / rate:.3g}",
                field="dt",
            )
        return self

    @property
    def epsilon0(self):
        return float(self.epsilon[0])

    @property
    def n0(self):
        return int(self.n[0])

    def to_dict(self):
        return asdict(self)


def stiffness_estimate(spec):
    """Worst-case gain/inflation rate for the smallest epsilon of the grid."""
    eps = min(spec.epsilon)
    n = min(int(v) for v in spec.n)
    model = lorenz96_model(max(n, 5), spec.forcing)
    phi = build_localization(max(n, 5), spec.l)
    st = localization_stats(phi)
    b = stability_bounds(model.c_f, 1.0, 1.0, st.c_phi, eps)
    p_hi = max(b.lambda_max, spec.init_spread**2)
    return max(st.c_phi * p_hi / eps, 1.0 / b.lambda_min)


def cell_seed(base_seed, cell, repeat):
    """``base_seed XOR hash(cell, repeat)`` as an unsigned 64-bit integer."""
    h = hashlib.blake2b(f"{int(cell)}:{int(repeat)}".encode(), digest_size=8)
    return (int(base_seed) ^ int.from_bytes(h.digest(), "little")) & (2**64 - 1)


@dataclass
class RunOutput:
    times: np.ndarray
    errors: np.ndarray
    diagnostics: object
    bounds: object
    seed: int


def twin_run(n, epsilon, m=10, dt=1e-4, steps=200_000, seed=0, l=1.4, stride=10,
             forcing=8.0, spinup_time=10.0, inflation=True, init_spread=1.0):
    """Simulate truth and observations in lock-step with the filter.

    Draws the same random numbers as :func:`lenkbf.dynamics.simulate`
    followed by :func:`lenkbf.filtering.run_filter`, without the files.
    """
    model = lorenz96_model(n, forcing)
    phi = build_localization(n, l)
    obs = ObsNoiseSpec.isotropic(n, epsilon)
    cfg = FilterConfig(phi=phi, obs=obs, dt=dt, drift=model, inflation_on=inflation)

    x = spinup_init(n, forcing, spinup_time, seed).x
    ens = init_ensemble(x, m, seed, spread=init_spread)
    runner = FilterRunner(cfg, ens, stride=stride)
    rng_truth = make_rng(seed, STREAM_TRUTH)
    rng_obs = make_rng(seed, STREAM_OBS)
    sqrt2dt = math.sqrt(2.0 * dt)
    obs_std = obs.noise_std(dt)

    truth = [x.copy()]
    for k in range(int(steps)):
        dy = x * dt + obs_std * rng_obs.standard_normal(n)
        runner.advance(dy)
        x = x + dt * model.drift(x) + sqrt2dt * rng_truth.standard_normal(n)
        if (k + 1) % stride == 0:
            truth.append(x.copy())
    res = runner.result()
    truth = np.asarray(truth)
    errors = error_series(truth, res.mean_trajectory)
    return RunOutput(
        times=res.record_steps * dt,
        errors=errors,
        diagnostics=res.diagnostics,
        bounds=runner.bounds,
        seed=int(seed),
    )


def error_series(truth, mean):
    """``e_t = X_t - Xbar_t`` for aligned trajectories of shape (K, n)."""
    truth = np.asarray(truth, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if truth.shape != mean.shape:
        raise ValueError(
            f"misaligned trajectories: truth {truth.shape} vs mean {mean.shape}"
        )
    return truth - mean


@dataclass
class MetricsRecord:
    run_id: str
    mse_time_avg_per_dim: float
    component_mse: np.ndarray
    pathwise_sup: float
    pathwise_component_sup: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def mse_total(self):
        return self.mse_time_avg_per_dim * self.component_mse.shape[0]


def metrics(errors, times=None, burn_in=0.0, run_id="", diagnostics=None):
    """Time-averaged and path-wise error statistics after ``burn_in``.

    Parameters
    ----------
    errors : ndarray of shape (K, n)
    times : ndarray of shape (K,), optional
        Record times; defaults to ``0, 1, ..., K-1``.
    burn_in : float
        Records with ``t < burn_in`` are discarded.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    K, n = errors.shape
    times = np.arange(K, dtype=float) if times is None else np.asarray(times, float)
    keep = times >= burn_in
    if not np.any(keep):
        raise ValueError(f"no records after burn-in {burn_in}")
    e2 = errors[keep] ** 2
    sq = e2.sum(axis=1)
    return MetricsRecord(
        run_id=str(run_id),
        mse_time_avg_per_dim=float(sq.mean() / n),
        component_mse=e2.mean(axis=0),
        pathwise_sup=float(sq.max()),
        pathwise_component_sup=float(e2.max()),
        diagnostics=dict(diagnostics or {}),
    )


def default_burn_in(epsilon, n=40, l=1.4, forcing=8.0):
    """Ten times the lower-bound settling time for the run's epsilon."""
    model = lorenz96_model(max(n, 5), forcing)
    st = localization_stats(build_localization(n, l))
    return 10.0 * stability_bounds(model.c_f, 1.0, 1.0, st.c_phi, epsilon).t_star_lower


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``; NaN if < 2 points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def linear_fit(x, y):
    """``(slope, intercept, r2)`` of an ordinary least-squares line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return float("nan"), float("nan"), float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def log_fit(T, y):
    """Fit ``y = a + b log T``; returns ``(a, b, residual_rms)``."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    if T.size < 2:
        return float("nan"), float("nan"), float("nan")
    b, a = np.polyfit(np.log(T), y, 1)
    resid = y - (a + b * np.log(T))
    return float(a), float(b), float(np.sqrt(np.mean(resid**2)))


@dataclass
class SweepResult:
    scenario: str
    rows: list
    summary: dict
    spec: ExperimentSpec = None


def _diag_summary(diag, bounds):
    return {
        "p_max_max": float(np.max(diag.p_max)),
        "p_min_min": float(np.min(diag.p_min)),
        "bound_violations": int(sum(diag.bound_violations.values())),
        "lambda_max": float(bounds.lambda_max) if bounds else float("nan"),
        "lambda_min": float(bounds.lambda_min) if bounds else float("nan"),
    }


def _run_cell(task):
    """Worker entry point: one twin run, reduced to a CSV row (dict)."""
    spec, cell, repeat, n, eps, steps = task
    seed = cell_seed(spec.base_seed, cell, repeat)
    row = {
        "scenario": spec.scenario,
        "cell": cell,
        "repeat": repeat,
        "seed": seed,
        "n": n,
        "epsilon": eps,
        "m": spec.m,
        "dt": spec.dt,
        "steps": steps,
        "T": steps * spec.dt,
        "status": "ok",
        "error": "",
    }
    burn = spec.burn_in if spec.burn_in is not None else default_burn_in(
        eps, n, spec.l, spec.forcing
    )
    row["burn_in"] = burn
    try:
        out = twin_run(n, eps, spec.m, spec.dt, steps, seed, spec.l, spec.stride,
                       spec.forcing, spec.spinup_time, spec.inflation, spec.init_spread)
    except Exception as exc:  # recorded per cell so the sweep completes
        logger.warning("cell %s repeat %s failed: %s", cell, repeat, exc)
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None
    rec = metrics(out.errors, out.times, burn, run_id=f"{cell}:{repeat}",
                  diagnostics=_diag_summary(out.diagnostics, out.bounds))
    comp = spec.component - 1
    row.update(
        mse_time_avg_per_dim=rec.mse_time_avg_per_dim,
        mse_total=rec.mse_total,
        component=spec.component,
        component_mse=float(rec.component_mse[comp]),
        pathwise_sup=rec.pathwise_sup,
        pathwise_component_sup=rec.pathwise_component_sup,
        **rec.diagnostics,
    )
    sq = (out.errors**2).sum(axis=1)
    return row, (out.times, sq)


def _map_cells(spec, tasks):
    if spec.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=int(spec.threads)) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def _ok(rows):
    return [r for r in rows if r["status"] == "ok"]


def _grouped_mean(rows, key, value):
    keys = sorted({r[key] for r in rows})
    return keys, [float(np.mean([r[value] for r in rows if r[key] == k])) for k in keys]


def eps_sweep(spec):
    spec.validate()
    tasks = [
        (spec, c, j, spec.n0, float(eps), int(spec.steps))
        for c, eps in enumerate(spec.epsilon)
        for j in range(spec.repeats)
    ]
    rows = [r for r, _ in _map_cells(spec, tasks)]
    good = _ok(rows)
    eps, mse = _grouped_mean(good, "epsilon", "mse_time_avg_per_dim")
    slope = loglog_slope(eps, mse)
    summary = {
        "epsilon": eps,
        "mse_time_avg_per_dim": mse,
        "slope": slope,
        "slope_defined": bool(len(eps) >= 2),
        "failed_cells": len(rows) - len(good),
    }
    return SweepResult("eps-sweep", rows, summary, spec)


def dim_sweep(spec):
    spec.validate()
    tasks = [
        (spec, c, j, int(n), spec.epsilon0, int(spec.steps))
        for c, n in enumerate(spec.n)
        for j in range(spec.repeats)
    ]
    rows = [r for r, _ in _map_cells(spec, tasks)]
    good = _ok(rows)
    dims, total = _grouped_mean(good, "n", "mse_total")
    _, comp = _grouped_mean(good, "n", "component_mse")
    slope, intercept, r2 = linear_fit(dims, total)
    flat = float(max(comp) / min(comp)) if comp and min(comp) > 0 else float("nan")
    summary = {
        "n": dims,
        "mse_total": total,
        "component": spec.component,
        "component_mse": comp,
        "slope": slope,
        "intercept": intercept,
        "r2": r2,
        "component_max_min_ratio": flat,
        "failed_cells": len(rows) - len(good),
    }
    return SweepResult("dim-sweep", rows, summary, spec)


def _prefix_sups(times, sq, T_grid, burn_in):
    out = []
    for T in T_grid:
        window = (times >= burn_in) & (times <= T + 1e-12)
        out.append(float(sq[window].max()) if np.any(window) else float("nan"))
    return out


def time_sweep(spec):
    """One run of length ``max(T)`` per repeat; sup errors over nested windows."""
    spec.validate()
    T_grid = sorted(float(t) for t in spec.T)
    steps = int(round(max(T_grid) / spec.dt))
    tasks = [(spec, 0, j, spec.n0, spec.epsilon0, steps) for j in range(spec.repeats)]
    results = _map_cells(spec, tasks)
    rows = []
    sups = []
    for row, series in results:
        if series is None:
            rows.append(row)
            continue
        times, sq = series
        per_T = _prefix_sups(times, sq, T_grid, row["burn_in"])
        sups.append(per_T)
        for T, s in zip(T_grid, per_T):
            r = dict(row)
            r["T"] = T
            r["sup_error"] = s
            rows.append(r)
    if sups:
        avg = np.mean(np.asarray(sups), axis=0)
        a, b, rms = log_fit(T_grid, avg)
        ratio = float(avg[-1] / avg[0])
        rel = rms / float(np.mean(avg))
    else:
        avg = np.full(len(T_grid), np.nan)
        a = b = rms = ratio = rel = float("nan")
    summary = {
        "T": T_grid,
        "avg_sup_error": [float(v) for v in avg],
        "a": a,
        "b": b,
        "residual_rms": rms,
        "residual_rms_rel": rel,
        "growth_ratio": ratio,
        "sqrt_T_ratio": math.sqrt(T_grid[-1] / T_grid[0]),
        "fit_defined": bool(len(T_grid) >= 2),
        "failed_cells": spec.repeats - len(sups),
    }
    return SweepResult("time-sweep", rows, summary, spec)


def single_run(spec):
    spec.validate()
    tasks = [(spec, 0, j, spec.n0, spec.epsilon0, int(spec.steps))
             for j in range(spec.repeats)]
    rows = [r for r, _ in _map_cells(spec, tasks)]
    good = _ok(rows)
    summary = {
        "mse_time_avg_per_dim": float(np.mean([r["mse_time_avg_per_dim"] for r in good]))
        if good else float("nan"),
        "failed_cells": len(rows) - len(good),
    }
    return SweepResult("single", rows, summary, spec)


def run_experiment(spec):
    return {
        "eps-sweep": eps_sweep,
        "dim-sweep": dim_sweep,
        "time-sweep": time_sweep,
        "single": single_run,
    }[spec.scenario](spec)
