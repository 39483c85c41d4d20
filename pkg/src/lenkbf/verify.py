"""Randomized property suites for the matrix facts, weights, Riccati and filter.

Each suite draws its instances from a seeded generator and records every
failing check with the inputs that produced it, so a failure can be replayed.
The taper is injectable, which lets a mutated Gaspari-Cohn function be run
through the same suites.

    >>> report = run_suites(["riccati"])
    >>> report.passed
    True
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .filtering import (
    Ensemble,
    FilterConfig,
    FilterRunner,
    cov_ode_rhs,
    ensemble_stats,
    filter_step,
    init_ensemble,
    mean_increment,
    spread_rhs,
)
from .locmat import (
    LocalizationMatrix,
    build_localization,
    gaspari_cohn,
    linear_distance,
    localization_stats,
    norms,
    op_norm,
)
from .model import ObsNoiseSpec, lorenz96_model
from .theory import (
    lyapunov_weights,
    lyapunov_weights_mc,
    riccati_closed_form,
    riccati_rk4,
    stability_bounds,
)

logger = logging.getLogger(__name__)

__all__ = ["Failure", "SuiteResult", "VerifyReport", "SUITES", "run_suites"]

TOL = 1e-10
# max |rho'| of the Gaspari-Cohn function is about 1.055
GC_SLOPE = 1.1


@dataclass
class Failure:
    instance: int
    check: str
    detail: str
    inputs: dict = field(default_factory=dict)

    def format(self):
        lines = [f"  instance {self.instance}: {self.check}: {self.detail}"]
        for k, v in self.inputs.items():
            text = np.array2string(np.asarray(v), precision=17, max_line_width=120) \
                if isinstance(v, np.ndarray) else repr(v)
            lines.append(f"    {k} = {text}")
        return "\n".join(lines)


@dataclass
class SuiteResult:
    name: str
    instances: int
    checks: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def check(self, ok, instance, name, detail="", **inputs):
        self.checks += 1
        if not ok:
            self.failures.append(Failure(instance, name, detail, inputs))
        return ok

    def format(self, max_failures=5):
        status = "PASS" if self.passed else "FAIL"
        head = (f"[{status}] {self.name}: {self.instances} instances, "
                f"{self.checks} checks, {len(self.failures)} failures")
        shown = [f.format() for f in self.failures[:max_failures]]
        if len(self.failures) > max_failures:
            shown.append(f"  ... {len(self.failures) - max_failures} more")
        return "\n".join([head] + shown)


@dataclass
class VerifyReport:
    results: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def format(self, max_failures=5):
        return "\n".join(r.format(max_failures) for r in self.results)


def _random_psd(rng, n):
    B = rng.standard_normal((n, rng.integers(1, n + 1)))
    return B @ B.T


def _random_phi(rng, n, taper):
    # Gaspari-Cohn of points on a line is positive semidefinite
    l = rng.uniform(0.3, 4.0)
    return build_localization(n, l, dist=linear_distance, taper=taper), l


def suite_norm_bounds(rng, instances=500, taper=gaspari_cohn):
    res = SuiteResult("norm_bounds", instances)
    for k in range(instances):
        n = int(rng.integers(1, 13))
        A = rng.uniform(-1.0, 1.0, (n, n))
        nb = norms(A)
        one_t = float(np.max(np.abs(A).sum(axis=1)))
        res.check(nb.max_abs <= nb.op_norm + TOL, k, "max_abs <= op_norm",
                  f"{nb.max_abs!r} > {nb.op_norm!r}", A=A)
        bound = math.sqrt(nb.one_norm * one_t)
        res.check(nb.op_norm <= bound + TOL, k, "op_norm <= sqrt(|A|_1 |A^T|_1)",
                  f"{nb.op_norm!r} > {bound!r}", A=A)
    return res


def suite_schur_bounds(rng, instances=500, taper=gaspari_cohn):
    res = SuiteResult("schur_bounds", instances)
    for k in range(instances):
        n = int(rng.integers(1, 9))
        try:
            phi, l = _random_phi(rng, n, taper)
        except ValueError as exc:
            res.check(False, k, "build taper", str(exc), n=n)
            continue
        E = phi.entries
        P = _random_psd(rng, n)
        Q = P + _random_psd(rng, n)
        PL, QL = P * E, Q * E
        lhs = np.diag(PL @ Q)
        rhs = np.diag(P @ QL)
        err = float(np.max(np.abs(lhs - rhs)))
        res.check(err <= TOL, k, "diag((P o phi) Q) == diag(P (Q o phi))",
                  f"max diff {err:.3e}", P=P, Q=Q, phi=E, l=l)
        lam = float(np.linalg.eigvalsh(QL - PL)[0])
        res.check(lam >= -TOL, k, "Q o phi - P o phi >= 0",
                  f"min eigenvalue {lam:.3e}", P=P, Q=Q, phi=E, l=l)
        a, b, c = np.max(np.abs(PL)), np.max(np.abs(P)), np.max(np.diag(P))
        res.check(a == b == c, k, "|P o phi|_max == |P|_max == max diag P",
                  f"{a!r}, {b!r}, {c!r}", P=P, phi=E, l=l)
        c_phi = localization_stats(phi).c_phi
        op, one = op_norm(PL), float(np.max(np.abs(PL).sum(axis=0)))
        res.check(op <= one + TOL and one <= c_phi * b + TOL, k,
                  "|P o phi| <= |P o phi|_1 <= C_phi |P|_max",
                  f"{op!r} <= {one!r} <= {c_phi * b!r}", P=P, phi=E, l=l)
    return res


def suite_schur_psd(rng, instances=500, taper=gaspari_cohn):
    res = SuiteResult("schur_psd", instances)
    for k in range(instances):
        n = int(rng.integers(1, 13))
        try:
            phi, l = _random_phi(rng, n, taper)
        except ValueError as exc:
            res.check(False, k, "build taper", str(exc), n=n)
            continue
        P = _random_psd(rng, n)
        lam = float(np.linalg.eigvalsh(P * phi.entries)[0])
        res.check(lam >= -TOL, k, "P o phi >= 0", f"min eigenvalue {lam:.3e}",
                  P=P, phi=phi.entries, l=l)
    return res


def suite_gc_continuity(rng, instances=500, taper=gaspari_cohn):
    res = SuiteResult("gc_continuity", instances)
    res.check(taper(0.0) == 1.0, -1, "rho(0) == 1", f"rho(0) = {taper(0.0)!r}")
    for h in (1e-3, 1e-6):
        jump = abs(taper(1.0 - h) - taper(1.0 + h))
        res.check(jump <= 2 * h * GC_SLOPE + TOL, -1, "continuity at 1",
                  f"|rho(1-h) - rho(1+h)| = {jump:.3e}", h=h)
        tail = abs(taper(2.0 - h))
        res.check(tail <= h * GC_SLOPE + TOL, -1, "continuity at 2",
                  f"|rho(2-h)| = {tail:.3e}", h=h)
    for k in range(instances):
        x = float(rng.uniform(0.0, 2.5))
        h = float(rng.choice([1e-3, 1e-6]))
        lo = max(x - h, 0.0)
        jump = abs(taper(x + h) - taper(lo))
        res.check(jump <= (x + h - lo) * GC_SLOPE + TOL, k, "local Lipschitz bound",
                  f"|rho(x+h) - rho(x-h)| = {jump:.3e}", x=x, h=h)
        v = taper(x)
        res.check(0.0 <= v <= 1.0, k, "range [0, 1]", f"rho(x) = {v!r}", x=x)
    return res


def _random_dominant_phi(rng, n):
    """Symmetric unit-diagonal phi with random sparsity and q < 1."""
    W = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < rng.uniform(0.2, 1.0))
    W = np.triu(W, 1)
    W = W + W.T
    rows = W.sum(axis=1).max()
    if rows > 0:
        W *= rng.uniform(0.05, 0.95) / rows
    E = W + np.eye(n)
    return LocalizationMatrix(E)


def _lyapunov_checks(res, k, E, q, v, i):
    n = E.shape[0]
    off = E - np.diag(np.diag(E))
    ctx = dict(phi=E, q=q, i=i, v=v)
    res.check(bool(np.all(v >= -TOL)), k, "v >= 0", f"min {v.min():.3e}", **ctx)
    res.check(v[i] >= 1 - q - TOL, k, "v_i >= 1 - q",
              f"v_i = {v[i]!r}, 1 - q = {1 - q!r}", **ctx)
    lhs = off @ v
    gap = float(np.max(lhs - v))
    res.check(gap <= TOL, k, "sum_l phi_jl v_l <= v_j", f"excess {gap:.3e}", **ctx)
    total = float(v.sum())
    res.check(total <= 1 + TOL, k, "sum v <= 1", f"sum {total!r}", **ctx)
    return n


def suite_lyapunov(rng, instances=200, taper=gaspari_cohn, mc_samples=100_000):
    res = SuiteResult("lyapunov", instances)
    for k in range(instances):
        n = int(rng.integers(1, 13))
        phi = _random_dominant_phi(rng, n)
        E = phi.entries
        q_phi = localization_stats(phi).q
        q = q_phi if rng.uniform() < 0.5 else float(rng.uniform(q_phi, 1.0))
        for i in range(n):
            v = lyapunov_weights(phi, q, i).v
            _lyapunov_checks(res, k, E, q, v, i)

    # two-node hand solution, in exact arithmetic
    fifth = Fraction(1, 5)
    w = lyapunov_weights([[1, fifth], [fifth, 1]], fifth, 0, exact=True)
    res.check(list(w.v) == [Fraction(5, 6), Fraction(1, 6)], -1,
              "two-node exact solve == (5/6, 1/6)", f"got {list(w.v)}")
    # floating-point solve agrees to rounding
    vf = lyapunov_weights(np.array([[1.0, 0.2], [0.2, 1.0]]), 0.2, 0).v
    err = float(np.max(np.abs(vf - np.array([5 / 6, 1 / 6]))))
    res.check(err <= 4 * np.finfo(float).eps, -1, "two-node float solve",
              f"max diff {err:.3e}", v=vf)

    if mc_samples:
        cases = [(np.array([[1.0, 0.2], [0.2, 1.0]]), 0.2, 0)]
        phi = _random_dominant_phi(rng, 5)
        cases.append((phi.entries, localization_stats(phi).q, 2))
        for c, (E, q, i) in enumerate(cases):
            v = lyapunov_weights(E, q, i).v
            mean, se = lyapunov_weights_mc(E, q, i, mc_samples, seed=int(rng.integers(2**31)))
            z = np.abs(mean * (1 - q) - v) / np.maximum(se * (1 - q), 1e-300)
            ok = np.all((z <= 3.0) | ((se == 0) & (np.abs(mean * (1 - q) - v) <= TOL)))
            res.check(bool(ok), c, "MC * (1 - q) matches the solve within 3 SE",
                      f"z-scores {np.round(z, 2)}", phi=E, q=q, i=i, v=v,
                      mc=mean * (1 - q))
    return res


def suite_riccati(rng, instances=20, taper=gaspari_cohn):
    res = SuiteResult("riccati", instances)
    for k in range(instances):
        a = float(rng.uniform(0.1, 3.0))
        b = float(rng.uniform(-2.0, 2.0))
        c = float(rng.uniform(0.1, 2.0))
        eps = float(rng.uniform(0.01, 1.0))
        y0 = float(rng.uniform(0.0, 3.0))
        for t in (0.1, 1.0):
            closed = riccati_closed_form(y0, a, b, c, eps, t)
            rk4 = riccati_rk4(y0, a, b, c, eps, t)
            err = abs(closed - rk4)
            res.check(err <= 1e-8, k, "closed form == RK4", f"|diff| = {err:.3e} at t={t}",
                      a=a, b=b, c=c, epsilon=eps, y0=y0, t=t)
        ts = np.linspace(0.0, 2.0, 41)
        ys = np.array([riccati_closed_form(y0, a, b, c, eps, t) for t in ts])
        d = np.diff(ys)
        mono = bool(np.all(d >= -1e-14) or np.all(d <= 1e-14))
        res.check(mono, k, "monotone approach to y_+", "", a=a, b=b, c=c, epsilon=eps, y0=y0)
    for eps in (0.001, 0.01, 0.1):
        y = riccati_closed_form(0.5, 2.0, 0.0, 1.0, eps, 1e3)
        err = abs(y - math.sqrt(2 * eps))
        res.check(err <= 1e-10, -1, "limit sqrt(2 eps)", f"|diff| = {err:.3e}", epsilon=eps)
    return res


def suite_stability(rng, instances=100, taper=gaspari_cohn):
    res = SuiteResult("stability", instances)
    grid = np.logspace(-4, -1, 13)
    for k in range(instances):
        c_f = float(rng.uniform(0.0, 300.0))
        w_min = float(rng.uniform(0.2, 2.0))
        w_max = w_min * float(rng.uniform(1.0, 3.0))
        c_phi = float(rng.uniform(1.0, 3.0))
        ctx = dict(c_f=c_f, omega_min=w_min, omega_max=w_max, c_phi=c_phi)
        lo = 2.0 * math.sqrt(3.0 / w_min)
        hi = (2.0 / w_min) * math.sqrt(c_f**2 * grid[-1] + 3.0 * w_min)
        for eps in grid:
            b = stability_bounds(c_f, w_min, w_max, c_phi, eps)
            r = b.lambda_max / math.sqrt(eps)
            res.check(lo * (1 - 1e-12) <= r <= hi * (1 + 1e-12), k,
                      "lambda_max / sqrt(eps) bracket", f"{r!r} not in [{lo}, {hi}]",
                      epsilon=eps, **ctx)
            r2 = b.lambda_min / math.sqrt(eps)
            lo2 = 1.0 / (3.0 * hi * w_max * c_phi)
            hi2 = 1.0 / (3.0 * lo * w_max * c_phi)
            res.check(lo2 * (1 - 1e-12) <= r2 <= hi2 * (1 + 1e-12), k,
                      "lambda_min / sqrt(eps) bracket", f"{r2!r} not in [{lo2}, {hi2}]",
                      epsilon=eps, **ctx)
            prod = b.lambda_min * b.lambda_max * 3.0 * w_max * c_phi / eps
            res.check(abs(prod - 1.0) <= 1e-12, k, "lambda_min lambda_max identity",
                      f"{prod!r}", epsilon=eps, **ctx)
            res.check(b.t_star_lower > b.t_star_upper > 0, k, "t_* > t'_* > 0", "",
                      epsilon=eps, **ctx)
            if eps <= 1e-2 and w_min == w_max and c_phi <= 2.0:
                res.check(b.lambda_min <= b.lambda_max, k, "lambda_min <= lambda_max", "",
                          epsilon=eps, **ctx)
    for eps in grid:
        b = stability_bounds(0.0, 1.0, 1.0, 1.0, eps)
        err = abs(b.lambda_max - 2.0 * math.sqrt(3.0) * math.sqrt(eps))
        res.check(err <= 1e-12, -1, "c_f = 0 closed form", f"|diff| = {err:.3e}", epsilon=eps)
    return res


def _random_filter_setup(rng, taper):
    n = int(rng.integers(5, 13))
    m = int(rng.integers(3, 11))
    eps = float(rng.uniform(0.2, 1.0))
    phi = build_localization(n, float(rng.uniform(0.8, 3.0)), taper=taper)
    omega = rng.uniform(0.5, 2.0, n)
    cfg = FilterConfig(phi=phi, obs=ObsNoiseSpec(eps, omega), dt=1e-4,
                       drift=lorenz96_model(n))
    X = 8.0 + 2.0 * rng.standard_normal((m, n))
    return cfg, X


def suite_filter(rng, instances=100, taper=gaspari_cohn):
    res = SuiteResult("filter", instances)
    for k in range(instances):
        cfg, X = _random_filter_setup(rng, taper)
        ens = Ensemble(X)
        dy = cfg.dt * ens.mean + math.sqrt(cfg.dt) * rng.standard_normal(cfg.n)
        got = filter_step(ens, dy, cfg).mean - ens.mean
        want = mean_increment(ens, dy, cfg)
        err = float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300))
        res.check(err <= TOL, k, "mean step == mean increment", f"relative {err:.3e}",
                  X=X, dy=dy)

    # covariance ODE by finite differences along the observation-free flow
    for k in range(10):
        cfg, X = _random_filter_setup(rng, taper)
        ens = Ensemble(X)
        V = spread_rhs(X, cfg)
        rhs = cov_ode_rhs(ens, cfg)
        errs = []
        for h in (1e-5, 5e-6, 1e-6, 5e-7):
            _, P_h = ensemble_stats(X + h * V)
            errs.append(float(np.max(np.abs((P_h - ens.cov) / h - rhs))))
        ratios = [errs[0] / errs[1], errs[2] / errs[3]]
        ok = all(1.8 <= r <= 2.2 for r in ratios)
        res.check(ok, k, "cov FD error halves with h", f"errors {errs}, ratios {ratios}", X=X)

    # [P^dagger P]_ii = 1 along a run
    n = 40
    cfg = FilterConfig(phi=build_localization(n, 1.4, taper=taper),
                       obs=ObsNoiseSpec.isotropic(n, 0.05), dt=1e-4, drift=lorenz96_model(n))
    x = 8.0 + rng.standard_normal(n)
    runner = FilterRunner(cfg, init_ensemble(x, 10, seed=int(rng.integers(2**31))))
    for _ in range(1000):
        runner.advance(x * cfg.dt + math.sqrt(cfg.epsilon * cfg.dt) * rng.standard_normal(n))
    res.check(runner.max_dagger_defect <= TOL, 0, "[P^dagger P]_ii == 1 over 1000 steps",
              f"max defect {runner.max_dagger_defect:.3e}")
    return res


SUITES = {
    "norm_bounds": suite_norm_bounds,
    "schur_bounds": suite_schur_bounds,
    "schur_psd": suite_schur_psd,
    "gc_continuity": suite_gc_continuity,
    "lyapunov": suite_lyapunov,
    "riccati": suite_riccati,
    "stability": suite_stability,
    "filter": suite_filter,
}

# selector shorthands
GROUPS = {
    "all": tuple(SUITES),
    "locmat": ("norm_bounds", "schur_bounds", "schur_psd", "gc_continuity"),
    "theory": ("lyapunov", "riccati", "stability"),
}


def resolve(selectors):
    if not selectors:
        return list(SUITES)
    names = []
    for s in selectors:
        key = s.replace("-", "_").lower()
        if key in GROUPS:
            names.extend(GROUPS[key])
        elif key in SUITES:
            names.append(key)
        else:
            known = ", ".join(list(SUITES) + list(GROUPS))
            raise KeyError(f"unknown suite {s!r} (known: {known})")
    return list(dict.fromkeys(names))


def run_suites(selectors=None, seed=0, taper=gaspari_cohn, instances=None):
    """Run the selected suites; each gets its own generator spawned from ``seed``."""
    results = []
    for name in resolve(selectors):
        idx = list(SUITES).index(name)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        kwargs = {"taper": taper}
        if instances is not None:
            kwargs["instances"] = instances
        logger.info("running suite %s", name)
        try:
            r = SUITES[name](rng, **kwargs)
        except Exception as exc:  # a crash is a failure, not an abort
            r = SuiteResult(name, 0)
            r.check(False, -1, "suite raised", f"{type(exc).__name__}: {exc}")
        results.append(r)
    return VerifyReport(results)
