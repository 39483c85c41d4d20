import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lenkbf.locmat import LocalizationMatrix, build_localization, distance_matrix
from lenkbf.model import (
    DriftModel,
    ObsNoiseSpec,
    canonicalize,
    lipschitz_metadata,
    lorenz96_drift,
    lorenz96_model,
    lorenz96_truncated_drift,
    truncated_lorenz96_model,
    verify_dominance,
)

states = arrays(np.float64, st.integers(4, 30), elements=st.floats(-40, 40))


class TestLorenz96:
    def test_zero_state(self):
        assert np.all(lorenz96_drift(np.zeros(40)) == 8.0)

    def test_equilibrium(self):
        assert np.all(lorenz96_drift(np.full(40, 8.0)) == 0.0)

    def test_hand_vector(self):
        out = lorenz96_drift(np.arange(1.0, 6.0))
        assert out[2] == 11.0
        assert out.tolist() == [-3.0, 4.0, 11.0, 13.0, -5.0]

    def test_ensemble_shape(self):
        X = np.random.default_rng(0).standard_normal((7, 12))
        out = lorenz96_drift(X)
        for i in range(7):
            np.testing.assert_array_equal(out[i], lorenz96_drift(X[i]))

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            lorenz96_drift(np.zeros(3))

    @given(states, st.integers(0, 50))
    def test_shift_equivariance(self, x, k):
        assert np.array_equal(lorenz96_drift(np.roll(x, k)), np.roll(lorenz96_drift(x), k))


class TestTruncated:
    def test_zero(self):
        assert np.all(lorenz96_truncated_drift(np.zeros(10)) == 0.0)

    def test_outside_cap(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 50.0])
        assert lorenz96_truncated_drift(x).tolist() == (-x).tolist()

    @given(states)
    def test_inside_cap_matches_untruncated(self, x):
        np.testing.assert_array_equal(lorenz96_truncated_drift(x), lorenz96_drift(x, 0.0))
        np.testing.assert_array_equal(lorenz96_truncated_drift(x, forcing=8.0),
                                      lorenz96_drift(x))

    def test_per_member_indicator(self):
        X = np.array([[1.0, 2, 3, 4, 5], [1.0, 2, 3, 4, 50]])
        out = lorenz96_truncated_drift(X)
        np.testing.assert_array_equal(out[0], lorenz96_drift(X[0], 0.0))
        np.testing.assert_array_equal(out[1], -X[1])

    def test_bad_cap(self):
        with pytest.raises(ValueError):
            lorenz96_truncated_drift(np.zeros(5), cap=0.0)


class TestLipschitz:
    def test_cap_40(self):
        F, c_f = lipschitz_metadata(40)
        assert F == (1.0, 80.0, 40.0)
        assert c_f == 241.0

    def test_cap_0(self):
        assert lipschitz_metadata(0) == ((1.0, 0.0, 0.0), 1.0)

    def test_cap_1(self):
        assert lipschitz_metadata(1)[1] == 7.0

    def test_model_c_f_is_row_sum(self):
        m = truncated_lorenz96_model(40)
        assert m.c_f == 241.0
        assert m.lipschitz_matrix().sum(axis=1).max() == m.c_f

    def test_small_ring_c_f(self):
        # n=4: distance 2 appears once per row
        F, c_f = lipschitz_metadata(40, n=4)
        assert c_f == 1 + 2 * 80 + 40

    def test_negative_seq_rejected(self):
        with pytest.raises(ValueError):
            DriftModel(n=5, drift=lambda x: x, lipschitz_seq=(1.0, -1.0))

    @settings(max_examples=200)
    @given(st.integers(5, 20), st.integers(0, 2**32 - 1))
    def test_short_range_bound(self, n, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(-40, 40, (2, n))
        F = truncated_lorenz96_model(n).lipschitz_matrix()
        lhs = np.abs(lorenz96_truncated_drift(x) - lorenz96_truncated_drift(y))
        assert np.all(lhs <= F @ np.abs(x - y) + 1e-9)


class TestObsNoise:
    def test_isotropic(self):
        o = ObsNoiseSpec.isotropic(3, 0.01)
        assert o.omega.tolist() == [1.0, 1.0, 1.0]
        assert (o.omega_min, o.omega_max, o.n) == (1.0, 1.0, 3)

    def test_matrix_omega(self):
        o = ObsNoiseSpec(0.1, np.diag([1.0, 2.0]))
        assert o.omega.tolist() == [1.0, 2.0]
        np.testing.assert_allclose(o.noise_std(0.5), np.sqrt(0.1 * 0.5 / np.array([1.0, 2.0])))

    @pytest.mark.parametrize("eps", [0.0, -1.0, np.nan])
    def test_bad_epsilon(self, eps):
        with pytest.raises(ValueError):
            ObsNoiseSpec(eps, np.ones(2))

    def test_non_diagonal(self):
        with pytest.raises(ValueError):
            ObsNoiseSpec(0.1, np.array([[1.0, 0.1], [0.1, 1.0]]))

    def test_nonpositive_omega(self):
        with pytest.raises(ValueError):
            ObsNoiseSpec(0.1, np.array([1.0, 0.0]))


class TestDominance:
    def test_identity(self):
        r = verify_dominance(LocalizationMatrix.identity(6), (1.0,), 1.0)
        assert r.holds_dominance and r.holds_domination
        assert r.min_c_F == 1.0

    def test_l96_reference_taper(self):
        phi = build_localization(40, 1.4)
        F, _ = lipschitz_metadata(40)
        r = verify_dominance(phi, F, 1e6)
        assert r.holds_dominance
        assert r.holds_domination
        E = phi.entries
        expected = max(1.0, 80.0 / E[0, 1], 40.0 / E[0, 2])
        assert r.min_c_F == pytest.approx(expected, rel=1e-15)
        assert not verify_dominance(phi, F, expected * 0.99).holds_domination

    def test_zero_taper_entry(self):
        phi = build_localization(12, 1.4)
        r = verify_dominance(phi, (1.0, 1.0, 1.0, 0.5), 1e9)
        assert not r.holds_domination
        assert r.min_c_F == np.inf


class TestCanonicalize:
    def test_identity(self):
        R = np.array([[0.3, 0.0], [0.0, 0.2]])
        c = canonicalize(1.0, np.eye(2), R, lambda x: 2 * x)
        np.testing.assert_array_equal(c.r_tilde, R)
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(c.drift(x), 2 * x)

    def test_linear_drift_invariant(self):
        A = np.array([[1.0, 2.0], [-1.0, 0.5]])
        c = canonicalize(2.0, np.eye(2), np.eye(2), lambda x: A @ x)
        x = np.array([0.3, 0.7])
        np.testing.assert_allclose(c.drift(x), A @ x, atol=1e-15)

    def test_obs_operator(self):
        c = canonicalize(1.0, 2 * np.eye(2), np.eye(2), lambda x: x)
        np.testing.assert_array_equal(c.r_tilde, 0.5 * np.eye(2))

    def test_round_trip_l96(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(0.5, 2.0, 8)
        c = canonicalize(np.diag(s), np.eye(8), np.eye(8), lorenz96_drift)
        x = rng.uniform(-10, 10, 8)
        back = c.inverse_transform_state(c.drift(c.transform_state(x)))
        np.testing.assert_allclose(back, lorenz96_drift(x), atol=1e-10)

    def test_obs_spec(self):
        c = canonicalize(1.0, np.eye(2), np.diag([0.1, 0.2]), lambda x: x)
        o = c.obs_spec(0.01)
        np.testing.assert_allclose(o.omega, 0.01 / np.array([0.01, 0.04]))

    def test_singular_h(self):
        with pytest.raises(np.linalg.LinAlgError):
            canonicalize(1.0, np.array([[1.0, 2.0], [2.0, 4.0]]), np.eye(2), lambda x: x)

    def test_rectangular_h(self):
        with pytest.raises(ValueError):
            canonicalize(1.0, np.ones((2, 3)), np.eye(2), lambda x: x)


def test_model_factory():
    m = lorenz96_model(40)
    assert m.c_f == 241.0
    assert np.all(m(np.full(40, 8.0)) == 0.0)
    assert distance_matrix(40).shape == (40, 40)
