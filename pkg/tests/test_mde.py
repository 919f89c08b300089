"""Tests for minimum-distance estimation."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings as hypothesis_settings, strategies as st

from config.settings import settings
from models.estimation import PHI_NAMES, THETA_NAMES, SystemSolution
from models.identification import Tolerances
from models.moments import MomentCovariance
from services.dgp import oracle_moment_covariance, true_parameters, true_solution
from services.mde import f_map, fit_minimum_distance, g_map, jacobian_f, jacobian_g
from services.moments import estimate_moments_discrete
from utils.exceptions import InitializationFailedError

STEP = 1e-6


def _central_difference(func, point: np.ndarray) -> np.ndarray:
    columns = []
    for i in range(point.size):
        up, down = point.copy(), point.copy()
        up[i] += STEP
        down[i] -= STEP
        columns.append((func(up) - func(down)) / (2.0 * STEP))
    return np.column_stack(columns)


phi_strategy = st.tuples(
    st.lists(st.floats(min_value=-3.0, max_value=3.0), min_size=4, max_size=4),
    st.lists(st.floats(min_value=0.05, max_value=0.95), min_size=8, max_size=8),
).map(lambda parts: np.array(parts[0] + parts[1]))


class TestMaps:
    """Tests for the moment map f and the parameter map g."""

    def test_f_at_truth_gives_oracle_moments(self, dgp_a, oracle_a):
        """Test that f(phi_0) reproduces the population moments."""
        implied = f_map(true_solution(dgp_a))

        np.testing.assert_allclose(implied.values, oracle_a.values, atol=1e-12)

    def test_g_at_truth_gives_structural_parameters(self, dgp_a, oracle_a):
        """Test that g(phi_0, m_0) returns alpha, beta and the probabilities."""
        theta = g_map(true_solution(dgp_a), oracle_a)

        np.testing.assert_allclose(theta.values, true_parameters(dgp_a).values, atol=1e-9)
        np.testing.assert_allclose(theta.alpha, dgp_a.alpha, atol=1e-9)
        np.testing.assert_allclose(theta.beta, dgp_a.beta, atol=1e-9)

    @given(phi=phi_strategy)
    @hypothesis_settings(max_examples=40, deadline=None)
    def test_jacobian_f_matches_finite_differences(self, phi):
        """Test the analytic Jacobian of f against central differences."""
        numeric = _central_difference(lambda p: f_map(SystemSolution(values=p)).values, phi)

        np.testing.assert_allclose(jacobian_f(phi), numeric, atol=1e-6)

    @given(phi=phi_strategy)
    @hypothesis_settings(max_examples=100, deadline=None)
    def test_jacobian_g_matches_finite_differences(self, phi):
        """Test both analytic derivatives of g against central differences at m = f(phi)."""
        for v in (0, 1):
            assume(abs(phi[5 + 2 * v] - phi[4 + 2 * v]) >= 0.1)
        implied = f_map(SystemSolution(values=phi))
        d_phi, d_m = jacobian_g(phi, implied)

        numeric_phi = _central_difference(lambda p: g_map(p, implied).values, phi)
        numeric_m = _central_difference(
            lambda m: g_map(phi, implied.model_copy(update={"values": m})).values, implied.values.copy()
        )

        np.testing.assert_allclose(d_phi, numeric_phi, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(d_m, numeric_m, rtol=1e-5, atol=1e-6)

    def test_jacobian_g_at_truth(self, dgp_a, oracle_a):
        """Test the derivatives of g at the DGP-A solution and population moments."""
        phi = true_solution(dgp_a).values.copy()
        d_phi, d_m = jacobian_g(phi, oracle_a)

        numeric_phi = _central_difference(lambda p: g_map(p, oracle_a).values, phi)
        numeric_m = _central_difference(
            lambda m: g_map(phi, oracle_a.model_copy(update={"values": m})).values, oracle_a.values.copy()
        )

        np.testing.assert_allclose(d_phi, numeric_phi, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(d_m, numeric_m, rtol=1e-5, atol=1e-6)

    def test_names(self):
        """Test the labels of phi and theta."""
        assert len(PHI_NAMES) == len(THETA_NAMES) == 12
        assert THETA_NAMES[:2] == ("alpha(v=0)", "beta(v=0)")


class TestFitMinimumDistance:
    """Tests for the fit and its delta-method inference."""

    def test_exact_moments(self, dgp_a, oracle_a):
        """Test that exact moments are fitted with zero objective from the closed form."""
        omega = oracle_moment_covariance(dgp_a)
        report = fit_minimum_distance(oracle_a, omega, rate=math.sqrt(1000.0))

        np.testing.assert_allclose(report.theta.values, true_parameters(dgp_a).values, atol=1e-8)
        np.testing.assert_allclose(report.phi.values, true_solution(dgp_a).values, atol=1e-8)
        assert report.objective < 1e-15
        assert report.initialization == "closed_form"
        assert report.diagnostics is not None

    def test_covariance_is_the_sandwich(self, dgp_a, oracle_a):
        """Test cov_phi = F^-1 Omega F^-T and the scaling of the standard errors."""
        omega = oracle_moment_covariance(dgp_a)
        report = fit_minimum_distance(oracle_a, omega, rate=10.0)
        f_inv = np.linalg.inv(jacobian_f(report.phi))

        np.testing.assert_allclose(report.cov_phi, f_inv @ omega.matrix @ f_inv.T, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(report.se_phi, np.sqrt(np.diag(report.cov_phi)) / 10.0, rtol=1e-12)
        np.testing.assert_allclose(report.cov_theta, report.cov_theta.T)

    def test_probability_standard_errors_carry_over(self, dgp_a, oracle_a):
        """Test that theta and phi share the variance of the probability coordinates."""
        report = fit_minimum_distance(oracle_a, oracle_moment_covariance(dgp_a), rate=10.0)

        np.testing.assert_allclose(report.se_theta[4:], report.se_phi[4:], rtol=1e-10)

    def test_sample_estimate_covers_truth(self, dgp_a, sample_a):
        """Test that alpha and beta land within five standard errors on 20,000 draws."""
        m_hat, omega = estimate_moments_discrete(sample_a)
        report = fit_minimum_distance(m_hat, omega)
        truth = true_parameters(dgp_a).values

        assert report.rate_label == "sqrt(n)"
        for i in range(4):
            assert abs(report.theta.values[i] - truth[i]) <= 5.0 * report.se_theta[i]

    def test_weighted_fit(self, dgp_a, oracle_a):
        """Test that weighting by Omega^-1 keeps the exact solution."""
        report = fit_minimum_distance(oracle_a, oracle_moment_covariance(dgp_a), rate=10.0, weighted=True)

        assert report.weighted
        np.testing.assert_allclose(report.theta.values, true_parameters(dgp_a).values, atol=1e-8)

    def test_weighted_fit_without_positive_definite_omega(self, oracle_a):
        """Test that a singular Omega falls back to the unweighted distance."""
        report = fit_minimum_distance(oracle_a, MomentCovariance.zeros(), rate=10.0, weighted=True)

        assert not report.weighted

    def test_fallback_starts(self, dgp_a, oracle_a):
        """Test that a failed closed form is replaced by the random-start grid."""
        tol = Tolerances.estimation(eig_gap=1.0)
        report = fit_minimum_distance(oracle_a, oracle_moment_covariance(dgp_a), rate=10.0, tol=tol)

        assert report.initialization == "fallback"
        assert report.diagnostics is None
        np.testing.assert_allclose(report.theta.values, true_parameters(dgp_a).values, atol=1e-5)

    def test_initialization_failed(self, dgp_a, oracle_a, monkeypatch):
        """Test the error raised when no fallback start converges."""
        monkeypatch.setattr(settings, "lm_max_iter", 1)
        tol = Tolerances.estimation(eig_gap=1.0)

        with pytest.raises(InitializationFailedError) as exc_info:
            fit_minimum_distance(oracle_a, oracle_moment_covariance(dgp_a), rate=10.0, tol=tol)

        assert exc_info.value.details["cause"] == "EigenvaluesNotDistinct"

    def test_report_document(self, dgp_a, oracle_a):
        """Test the labels of the report document."""
        doc = fit_minimum_distance(oracle_a, oracle_moment_covariance(dgp_a), rate=10.0).to_document()

        assert doc["kind"] == "estimate_report"
        assert set(doc["theta"]) == set(THETA_NAMES)
        assert doc["theta"]["beta(v=0)"] == pytest.approx(2.0, abs=1e-8)
