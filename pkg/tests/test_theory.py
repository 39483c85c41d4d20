import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lenkbf.locmat import LocalizationMatrix, build_localization, localization_stats
from lenkbf.theory import (
    alpha_beta,
    lyapunov_weights,
    lyapunov_weights_mc,
    rho_constant,
    riccati_closed_form,
    riccati_rk4,
    riccati_roots,
    stability_bounds,
)

C_PHI = 1.9769074393605832
EPS_GRID = [1e-4, 1e-3, 1e-2, 1e-1]


class TestStabilityBounds:
    def test_frozen_reference(self):
        b = stability_bounds(241.0, 1.0, 1.0, C_PHI, 0.01)
        assert b.lambda_max == pytest.approx(4.832432099885109, rel=1e-14)
        assert b.lambda_min == pytest.approx(0.00034892063088502186, rel=1e-14)
        assert b.t_star_upper == pytest.approx(0.0020693513728289635, rel=1e-14)
        assert b.t_star_lower == pytest.approx(0.003116113265484029, rel=1e-14)

    @pytest.mark.parametrize("eps", EPS_GRID)
    def test_zero_cf(self, eps):
        b = stability_bounds(0.0, 1.0, 1.0, 1.0, eps)
        assert b.lambda_max == pytest.approx(2 * math.sqrt(3) * math.sqrt(eps), rel=1e-14)

    def test_lambda_min_formula(self):
        b = stability_bounds(241.0, 0.5, 2.0, C_PHI, 0.01)
        assert b.lambda_min == pytest.approx(0.01 / (3 * b.lambda_max * 2.0 * C_PHI), rel=1e-15)
        assert b.t_star_lower == pytest.approx(b.t_star_upper + 3 * b.lambda_min, rel=1e-15)

    def test_sqrt_eps_brackets(self):
        grid = np.logspace(-4, -1, 13)
        bs = [stability_bounds(1.0, 1.0, 1.0, C_PHI, e) for e in grid]
        up = np.array([b.lambda_max / math.sqrt(e) for b, e in zip(bs, grid)])
        lo = np.array([b.lambda_min / math.sqrt(e) for b, e in zip(bs, grid)])
        assert 3.0 < up.min() and up.max() < 4.0
        assert 0.04 < lo.min() and lo.max() < 0.06

    @pytest.mark.parametrize("eps", [1e-4, 1e-3, 1e-2])
    def test_ordering(self, eps):
        b = stability_bounds(241.0, 1.0, 1.0, C_PHI, eps)
        assert b.lambda_min <= b.lambda_max
        assert b.t_star_lower > b.t_star_upper

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_bad_inputs(self, bad):
        with pytest.raises(ValueError):
            stability_bounds(1.0, bad, 1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            stability_bounds(1.0, 1.0, 1.0, 1.0, bad)


class TestRiccati:
    def test_roots(self):
        lo, hi = riccati_roots(2.0, 0.0, 1.0, 0.01)
        assert hi == pytest.approx(0.1414213562373095, abs=1e-16)
        assert lo == -hi

    def test_complex_roots(self):
        with pytest.raises(ValueError):
            riccati_roots(-5.0, 0.0, 1.0, 0.01)

    def test_degenerate(self):
        _, hi = riccati_roots(2.0, 0.0, 1.0, 0.01)
        with pytest.raises(ValueError):
            riccati_closed_form(hi, 2.0, 0.0, 1.0, 0.01, 1.0)

    def test_initial_time(self):
        assert riccati_closed_form(0.5, 2.0, 0.3, 1.0, 0.01, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_frozen(self):
        assert riccati_closed_form(0.5, 2, 0, 1, 0.01, 0.1) == pytest.approx(
            0.15108649835380297, rel=1e-14)
        assert riccati_closed_form(1.0, 1.5, 0.5, 2.0, 0.1, 1.0) == pytest.approx(
            0.28665176012920546, rel=1e-14)

    @pytest.mark.parametrize("eps", [1e-4, 1e-2, 1.0])
    def test_limit(self, eps):
        y = riccati_closed_form(3.0, 2.0, 0.0, 1.0, eps, 1e3)
        assert abs(y - math.sqrt(2 * eps)) <= 1e-10

    @pytest.mark.parametrize("t", [0.1, 1.0])
    def test_rk4(self, t):
        args = (1.0, 1.5, 0.5, 2.0, 0.1)
        assert abs(riccati_closed_form(*args, t) - riccati_rk4(*args, t)) <= 1e-8

    @settings(max_examples=30)
    @given(st.floats(0.01, 3.0), st.floats(0.1, 3.0), st.floats(0.0, 0.5))
    def test_monotone_approach(self, y0, a, eps_off):
        eps = 0.05 + eps_off
        _, hi = riccati_roots(a, 0.2, 1.0, eps)
        if abs(y0 - hi) < 1e-6:
            return
        ys = [riccati_closed_form(y0, a, 0.2, 1.0, eps, t) for t in np.linspace(0, 2, 40)]
        d = np.diff(ys) * np.sign(hi - y0)
        assert np.all(d >= -1e-12)


class TestLyapunov:
    def test_single_node(self):
        for q in (0.0, 0.3, 0.9):
            assert lyapunov_weights(np.ones((1, 1)), q, 0).v.tolist() == [1.0]

    def test_two_node_exact(self):
        phi = [[Fraction(1), Fraction(1, 5)], [Fraction(1, 5), Fraction(1)]]
        w = lyapunov_weights(phi, Fraction(1, 5), 0, exact=True)
        assert list(w.v) == [Fraction(5, 6), Fraction(1, 6)]

    def test_two_node_float(self):
        v = lyapunov_weights(np.array([[1.0, 0.2], [0.2, 1.0]]), 0.2, 0).v
        np.testing.assert_allclose(v, [5 / 6, 1 / 6], rtol=4 * np.finfo(float).eps)

    def test_identity(self):
        v = lyapunov_weights(np.eye(5), 0.5, 2).v
        assert v.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]

    def test_q_checks(self):
        phi = np.array([[1.0, 0.2], [0.2, 1.0]])
        with pytest.raises(ValueError):
            lyapunov_weights(phi, 1.0, 0)
        with pytest.raises(ValueError):
            lyapunov_weights(phi, 0.1, 0)
        with pytest.raises(IndexError):
            lyapunov_weights(phi, 0.5, 2)

    def test_claims_on_gc_taper(self):
        phi = build_localization(40, 1.4)
        q = localization_stats(phi).q
        for i in (0, 10, 39):
            v = lyapunov_weights(phi, q, i).v
            E = phi.entries
            off = E - np.eye(40)
            assert np.all(v >= -1e-10)
            assert v[i] >= 1 - q - 1e-10
            assert np.all(off @ v <= v + 1e-10)
            assert v.sum() <= 1 + 1e-10

    def test_mc_identity(self):
        q = 0.5
        mean, se = lyapunov_weights_mc(np.eye(3), q, 1, samples=20_000, seed=0)
        assert abs(mean[1] - 1 / (1 - q)) <= 3 * se[1]
        assert mean[0] == 0.0 and mean[2] == 0.0

    def test_mc_two_node_reconciled(self):
        phi = np.array([[1.0, 0.2], [0.2, 1.0]])
        q = 0.2
        mean, se = lyapunov_weights_mc(phi, q, 0, samples=100_000, seed=1)
        v = lyapunov_weights(phi, q, 0).v
        assert np.all(np.abs(mean * (1 - q) - v) <= 3 * se * (1 - q))

    def test_mc_samples_check(self):
        with pytest.raises(ValueError):
            lyapunov_weights_mc(np.eye(2), 0.5, 0, samples=0)


class TestRates:
    def test_alpha_floor(self):
        r = alpha_beta(0.0, 1.0, 0.5, 241.0, C_PHI, 1.0, 0.01)
        assert r.alpha_t == -242.0

    def test_frozen(self):
        r = alpha_beta(0.1, 0.5, 1 - 0.9769074393605832, 241.0, C_PHI, 1.0, 0.01)
        assert r.alpha_t == pytest.approx(-241.53814878721167, rel=1e-14)
        assert r.beta_t == pytest.approx(29140.204075594982, rel=1e-14)

    def test_beta_bounded_over_eps(self):
        betas = []
        for eps in EPS_GRID:
            b = stability_bounds(1.0, 1.0, 1.0, C_PHI, eps)
            betas.append(alpha_beta(b.lambda_min, b.lambda_max, 0.02, 1.0, C_PHI, 1.0, eps).beta_t)
        assert min(betas) > 0
        assert max(betas) / min(betas) < 2.0

    def test_eps_linearity(self):
        a1 = alpha_beta(0.3, 0.6, 0.5, 2.0, 1.5, 1.0, 0.1)
        a2 = alpha_beta(0.3, 0.6, 0.5, 2.0, 1.5, 1.0, 0.2)
        assert (a2.alpha_t + 3.0) == pytest.approx((a1.alpha_t + 3.0) / 2, rel=1e-14)
        fixed = 2.0**2 * 0.6 + 2.0
        assert (a2.beta_t - fixed) == pytest.approx((a1.beta_t - fixed) / 2, rel=1e-14)


class TestRho:
    def test_dominant_uses_q(self):
        phi = build_localization(40, 1.4)
        assert rho_constant(phi) == pytest.approx(1 - 0.9769074393605832, rel=1e-12)

    def test_gershgorin(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 10))
            A = rng.uniform(0, 1, (n, n))
            A = (A + A.T) / 2
            np.fill_diagonal(A, 0)
            A *= rng.uniform(0.1, 0.99) / A.sum(axis=1).max()
            E = A + np.eye(n)
            assert rho_constant(E) <= np.linalg.eigvalsh(E)[0] + 1e-10

    def test_non_dominant_uses_eigenvalue(self):
        E = LocalizationMatrix.ones(3).entries * 0.6 + 0.4 * np.eye(3)
        assert rho_constant(E) == pytest.approx(0.4, abs=1e-14)
