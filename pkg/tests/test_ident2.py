"""Tests for closed-form identification in the binary model."""

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from models.identification import Tolerances
from models.moments import CELLS, CellIndex, MomentVector
from services.dgp import oracle_moments
from services.ident2 import build_q, eig2x2, identify, identify_prop1, identify_prop2, label_columns, solve_alpha_beta
from utils.exceptions import (
    ComplexEigenvaluesError,
    DegenerateEigenvectorError,
    EigenvaluesNotDistinctError,
    LabelingAmbiguousError,
    SingularIVMatrixError,
    SingularQError,
)


def _affine(moments: MomentVector, a: float, b: float) -> MomentVector:
    """Moments of (a + b Y, T)."""
    table = moments.as_matrix().copy()
    ey, et, eyt = table[:, 0].copy(), table[:, 1].copy(), table[:, 2].copy()
    table[:, 0] = a + b * ey
    table[:, 2] = a * et + b * eyt
    return MomentVector.from_cells(table)


class TestBuildQ:
    """Tests for the Q matrix layout."""

    def test_layout(self, oracle_a):
        """Test Q(z,v) = [[1, E[Y]], [E[T], E[YT]]]."""
        q = build_q(oracle_a)

        for cell in CELLS:
            expected = np.array([
                [1.0, oracle_a.ey(*cell)],
                [oracle_a.et(*cell), oracle_a.eyt(*cell)],
            ])
            np.testing.assert_array_equal(q.q(*cell), expected)


class TestEig2x2:
    """Tests for the analytic 2x2 eigensolver."""

    def test_upper_triangular(self):
        """Test eigenpairs of an upper-triangular matrix."""
        values, vectors = eig2x2(np.array([[2.0, 1.0], [0.0, 3.0]]))

        np.testing.assert_allclose(values, [2.0, 3.0])
        np.testing.assert_allclose(vectors, [[1.0, 1.0], [0.0, 1.0]])

    def test_eigen_equation_holds(self):
        """Test A v = lambda v with first entries scaled to one."""
        matrix = np.array([[0.7, 0.4], [0.2, 1.9]])
        values, vectors = eig2x2(matrix)

        np.testing.assert_allclose(vectors[0], [1.0, 1.0])
        for i in range(2):
            np.testing.assert_allclose(matrix @ vectors[:, i], values[i] * vectors[:, i], atol=1e-12)

    def test_complex_eigenvalues(self):
        """Test that a rotation raises ComplexEigenvalues."""
        with pytest.raises(ComplexEigenvaluesError):
            eig2x2(np.array([[0.0, -1.0], [1.0, 0.0]]))

    def test_repeated_eigenvalues(self):
        """Test that coinciding eigenvalues raise when a gap is required."""
        with pytest.raises(EigenvaluesNotDistinctError):
            eig2x2(np.eye(2), min_gap=1e-10)

    def test_vanishing_first_entry(self):
        """Test that an eigenvector (0, 1) raises DegenerateEigenvector."""
        with pytest.raises(DegenerateEigenvectorError):
            eig2x2(np.array([[1.0, 0.0], [1.0, 2.0]]))


class TestLabelColumns:
    """Tests for ordering eigenpairs by the emission rates."""

    def test_orders_by_second_row(self):
        """Test that columns are sorted so the second-row entries ascend."""
        values, vectors = label_columns(np.array([5.0, 1.0]), np.array([[1.0, 1.0], [0.9, 0.1]]))

        np.testing.assert_array_equal(values, [1.0, 5.0])
        np.testing.assert_array_equal(vectors[1], [0.1, 0.9])

    def test_ambiguous(self):
        """Test that equal emission rates cannot be labeled."""
        with pytest.raises(LabelingAmbiguousError):
            label_columns(np.array([1.0, 2.0]), np.array([[1.0, 1.0], [0.5, 0.5]]), label_tol=1e-10)


class TestSolveAlphaBeta:
    """Tests for the 2x2 outcome relation."""

    def test_solution(self):
        """Test alpha and beta from E[Y|z] and Pr(T*=1|z)."""
        alpha, beta = solve_alpha_beta((1.0, 3.0), (0.2, 0.6), 1e-10)

        assert beta == pytest.approx(5.0)
        assert alpha == pytest.approx(0.0, abs=1e-12)

    def test_irrelevant_instrument(self):
        """Test that equal treatment probabilities raise SingularIVMatrix."""
        with pytest.raises(SingularIVMatrixError):
            solve_alpha_beta((1.0, 3.0), (0.4, 0.4), 1e-10)


class TestProp1:
    """Tests for identification with Z-dependent misclassification."""

    def test_recovers_dgp_a(self, dgp_a, oracle_a):
        """Test exact recovery of every DGP-A parameter."""
        decomp, _ = identify_prop1(build_q(oracle_a))

        np.testing.assert_allclose(decomp.alpha, dgp_a.alpha, atol=1e-9)
        np.testing.assert_allclose(decomp.beta, dgp_a.beta, atol=1e-9)
        np.testing.assert_allclose(decomp.misclassification, dgp_a.misclassification, atol=1e-9)
        np.testing.assert_allclose(decomp.pr_tstar, dgp_a.pr_tstar, atol=1e-9)
        for v in (0, 1):
            expected = [dgp_a.alpha[v], dgp_a.alpha[v] + dgp_a.beta[v]]
            np.testing.assert_allclose(decomp.outcome_means[v], expected, atol=1e-9)

    def test_cross_ratios(self, oracle_a):
        """Test that the eigenvalues of the cross-ratio product are 1/3 and 3/4."""
        _, diagnostics = identify_prop1(build_q(oracle_a))

        assert diagnostics.cross_ratios[0] == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert diagnostics.cross_ratios[1] == pytest.approx(0.75, abs=1e-12)
        assert diagnostics.eigenvalue_gap == pytest.approx(0.75 - 1.0 / 3.0, abs=1e-12)
        assert diagnostics.clamped == ()

    def test_reconstruction(self, oracle_a):
        """Test Q(z,v) = L_T(z) Lambda(z,v) L_Y(v)^T."""
        q = build_q(oracle_a)
        decomp, _ = identify_prop1(q)

        for cell in CELLS:
            np.testing.assert_allclose(decomp.reconstruct(*cell), q.q(*cell), atol=1e-10)

    def test_lambda_rows_sum_to_one(self, oracle_a):
        """Test that each Lambda(z,v) is a probability pair."""
        decomp, _ = identify_prop1(build_q(oracle_a))

        np.testing.assert_allclose(decomp.lam.sum(axis=1), 1.0, atol=1e-10)

    def test_relevance_gaps(self, oracle_a):
        """Test the reported instrument and covariate relevance gaps."""
        _, diagnostics = identify_prop1(build_q(oracle_a))

        np.testing.assert_allclose(diagnostics.relevance_gaps_z, [0.4, 0.5], atol=1e-9)
        np.testing.assert_allclose(diagnostics.relevance_gaps_v, [0.2, 0.3], atol=1e-9)

    def test_z_irrelevant(self, dgp_z_irrelevant):
        """Test that an instrument without effect on T* is detected."""
        with pytest.raises(EigenvaluesNotDistinctError):
            identify_prop1(build_q(oracle_moments(dgp_z_irrelevant)))

    def test_dgp_b_has_equal_cross_ratios(self, dgp_b):
        """Test that V-free treatment probabilities defeat the Z-dependent route."""
        with pytest.raises(EigenvaluesNotDistinctError):
            identify_prop1(build_q(oracle_moments(dgp_b)))

    def test_singular_q(self, oracle_a):
        """Test that a singular Q(0,0) raises SingularQ."""
        table = oracle_a.as_matrix().copy()
        table[0] = [0.5, 0.5, 0.25]

        with pytest.raises(SingularQError) as exc_info:
            identify_prop1(build_q(MomentVector.from_cells(table)))

        assert exc_info.value.details["cell"] == "z0v0"

    @given(
        shift=st.floats(min_value=-5.0, max_value=5.0),
        scale=st.floats(min_value=0.2, max_value=5.0),
    )
    @hypothesis_settings(max_examples=30, deadline=None)
    def test_affine_equivariance(self, oracle_a, shift, scale):
        """Test alpha -> a + b alpha and beta -> b beta under Y -> a + b Y."""
        base, _ = identify_prop1(build_q(oracle_a))
        moved, _ = identify_prop1(build_q(_affine(oracle_a, shift, scale)))

        np.testing.assert_allclose(moved.alpha, shift + scale * base.alpha, atol=1e-7 * (1 + abs(shift) + scale))
        np.testing.assert_allclose(moved.beta, scale * base.beta, atol=1e-7 * scale)
        np.testing.assert_allclose(moved.lam, base.lam, atol=1e-8)


class TestProp2:
    """Tests for identification with Z-free misclassification."""

    def test_recovers_dgp_b(self, dgp_b):
        """Test exact recovery of DGP-B."""
        decomp, diagnostics = identify_prop2(build_q(oracle_moments(dgp_b)))

        np.testing.assert_allclose(decomp.alpha, dgp_b.alpha, atol=1e-9)
        np.testing.assert_allclose(decomp.beta, dgp_b.beta, atol=1e-9)
        np.testing.assert_allclose(decomp.misclassification, dgp_b.misclassification, atol=1e-9)
        np.testing.assert_allclose(decomp.pr_tstar, dgp_b.pr_tstar, atol=1e-9)
        assert decomp.route == "prop2"
        assert diagnostics.lambda_v_discrepancy == pytest.approx(0.0, abs=1e-9)

    def test_agrees_with_prop1(self, dgp_c):
        """Test that both routes give the same decomposition when both apply."""
        q = build_q(oracle_moments(dgp_c))
        first, _ = identify_prop1(q)
        second, diagnostics = identify_prop2(q)

        np.testing.assert_allclose(second.alpha, first.alpha, atol=1e-9)
        np.testing.assert_allclose(second.beta, first.beta, atol=1e-9)
        np.testing.assert_allclose(second.lam, first.lam, atol=1e-9)
        np.testing.assert_allclose(second.l_t, first.l_t, atol=1e-9)
        assert diagnostics.lambda_v_discrepancy == pytest.approx(0.3, abs=1e-9)

    def test_reconstruction(self, dgp_b):
        """Test Q(z,v) = L_T Lambda(z,v) L_Y(v)^T on DGP-B."""
        q = build_q(oracle_moments(dgp_b))
        decomp, _ = identify_prop2(q)

        for cell in CELLS:
            np.testing.assert_allclose(decomp.reconstruct(*cell), q.q(*cell), atol=1e-10)


class TestIdentifyDispatch:
    """Tests for route dispatch."""

    def test_routes(self, oracle_a):
        """Test that the route name reaches the decomposition."""
        decomp, _ = identify(build_q(oracle_a), "prop1", Tolerances.identification())
        assert decomp.route == "prop1"

    def test_unknown_route(self, oracle_a):
        """Test that an unknown route is rejected."""
        with pytest.raises(ValueError):
            identify(build_q(oracle_a), "prop9")

    def test_lambda_matrix(self, oracle_a):
        """Test the diagonal Lambda accessor."""
        decomp, _ = identify(build_q(oracle_a))
        np.testing.assert_allclose(np.diag(decomp.lambda_matrix(1, 1)), [0.1, 0.9], atol=1e-9)
        assert CellIndex(1, 1).position == 3
