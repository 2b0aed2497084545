import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errlab.errors import NonFiniteIntegrand, NotPositiveSemiDefinite
from errlab.randmath import (RngState, as_covariance, cholesky, double_factorial,
                             gauss_hermite_expectation, mvn_sample, normal_central_moment)

SIGMA_EPS = [[38.0, 20.5], [20.5, 34.5]]


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky([[4, 0], [0, 9]]), [[2, 0], [0, 3]])

    def test_round_trip_error_covariance(self):
        L = cholesky(SIGMA_EPS)
        assert np.allclose(np.triu(L, 1), 0)
        np.testing.assert_allclose(L @ L.T, SIGMA_EPS, atol=1e-10)

    def test_zero_matrix_is_accepted(self):
        np.testing.assert_array_equal(cholesky(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_indefinite_rejected(self):
        with pytest.raises(NotPositiveSemiDefinite):
            cholesky([[1, 2], [2, 1]])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            as_covariance([[1, 0.5], [0.4, 1]])

    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_random_spd_round_trip(self, d, seed):
        A = np.random.default_rng(seed).normal(size=(d, d))
        cov = A @ A.T + 1e-3 * np.eye(d)
        cov = (cov + cov.T) / 2
        L = cholesky(cov)
        np.testing.assert_allclose(L @ L.T, cov, atol=1e-9 * max(1, np.abs(cov).max()))


class TestMvnSample:
    def test_zero_covariance_returns_mean(self):
        out = mvn_sample([1.5, -2.0], np.zeros((2, 2)), 100, RngState(3))
        assert np.all(out == np.array([1.5, -2.0]))

    def test_sample_covariance_matches(self):
        x = mvn_sample([0, 0], SIGMA_EPS, 1_000_000, RngState(11))
        np.testing.assert_allclose(np.cov(x.T), SIGMA_EPS, rtol=0.02)
        # CLT band on the means
        se = np.sqrt(np.diag(SIGMA_EPS) / x.shape[0])
        assert np.all(np.abs(x.mean(axis=0)) < 3 * se)

    def test_same_state_same_draws(self):
        s = RngState(42, 7)
        np.testing.assert_array_equal(mvn_sample([0, 0], SIGMA_EPS, 50, s),
                                      mvn_sample([0, 0], SIGMA_EPS, 50, RngState(42, 7)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mvn_sample([0, 0, 0], SIGMA_EPS, 5, RngState(0))


class TestRngState:
    def test_spawn_is_deterministic_and_distinct(self):
        a = RngState(5).spawn(2, 3)
        assert a == RngState(5).spawn(2, 3)
        assert a != RngState(5).spawn(3, 2)
        x, y = a.generator().random(1000), RngState(5).spawn(3, 2).generator().random(1000)
        assert abs(np.corrcoef(x, y)[0, 1]) < 0.1

    def test_json_round_trip(self):
        s = RngState(2**63 + 5, 17)
        assert RngState.from_json(s.to_json()) == s

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            RngState(-1)


class TestMoments:
    @pytest.mark.parametrize("m, expected", [(5, 15), (0, 1), (7, 105), (-1, 1), (1, 1), (6, 48)])
    def test_double_factorial(self, m, expected):
        assert double_factorial(m) == expected

    @pytest.mark.parametrize("order, sigma, expected", [(2, 1, 1), (4, 1, 3), (3, 2, 0), (0, 3, 1), (6, 2, 960)])
    def test_normal_central_moment(self, order, sigma, expected):
        assert normal_central_moment(order, sigma) == pytest.approx(expected)

    @pytest.mark.parametrize("order", [2, 4, 6])
    def test_moment_matches_monte_carlo(self, order):
        e = RngState(99, order).generator().standard_normal(10_000_000) * 1.3
        v = e ** order
        se = v.std() / math.sqrt(v.size)
        assert abs(v.mean() - normal_central_moment(order, 1.3)) < 3 * se


class TestGaussHermite:
    @given(st.floats(-50, 50), st.floats(0.01, 100))
    @settings(max_examples=30, deadline=None)
    def test_identity_is_exact(self, mu, s2):
        assert gauss_hermite_expectation(lambda w: w, mu, s2) == pytest.approx(mu, abs=1e-9 * (1 + abs(mu)))

    @pytest.mark.parametrize("nodes", [2, 5, 40])
    def test_square(self, nodes):
        assert gauss_hermite_expectation(np.square, 0.0, 4.0, nodes) == pytest.approx(4.0, abs=1e-12)

    def test_lognormal_mean(self):
        assert abs(gauss_hermite_expectation(np.exp, 0.0, 1.0, 40) - math.exp(0.5)) < 1e-8

    def test_vector_mu(self):
        out = gauss_hermite_expectation(np.exp, np.array([0.0, 1.0]), 1.0)
        np.testing.assert_allclose(out, np.exp([0.5, 1.5]), rtol=1e-10)

    def test_non_finite_integrand(self):
        with pytest.raises(NonFiniteIntegrand):
            gauss_hermite_expectation(np.log, 0.0, 1.0)
