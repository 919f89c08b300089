"""Tests for synthetic worlds, their oracles and samplers."""

import ast
from pathlib import Path

import numpy as np
import pytest

from models.dgp import DgpSpec2, DgpSpecK
from models.moments import CellIndex
from services import dgp as dgp_module
from services.dgp import (
    load_fixture,
    load_spec,
    oracle_moments,
    oracle_outcome_distribution,
    parse_spec,
    simulate,
    simulate_potential_outcomes,
    true_effects,
    true_parameters,
    true_solution,
    verify_assumptions,
)
from utils.exceptions import InputSchemaError, SpecValidationError


def _binary_doc(**overrides):
    doc = {
        "kind": "dgp_spec2",
        "pr_tstar": [0.2, 0.6, 0.4, 0.9],
        "misclassification": [[0.1, 0.8], [0.2, 0.9]],
        "alpha": [1.0, 1.5],
        "beta": [2.0, 1.0],
        "pr_z_given_v": [0.5, 0.5],
        "pr_v": 0.5,
    }
    doc.update(overrides)
    return doc


class TestSpecLoading:
    """Tests for parsing and validating world documents."""

    def test_fixtures_load(self):
        """Test that every bundled world parses."""
        assert isinstance(load_fixture("dgp_a"), DgpSpec2)
        assert isinstance(load_fixture("dgp_m"), DgpSpecK)

    def test_unknown_kind(self):
        """Test that the kind field selects the schema."""
        with pytest.raises(SpecValidationError):
            parse_spec({"kind": "dgp_spec3"})

    def test_missing_field(self):
        """Test that missing fields are validation errors."""
        doc = _binary_doc()
        del doc["alpha"]

        with pytest.raises(SpecValidationError):
            parse_spec(doc)

    def test_unordered_misclassification(self):
        """Test that Pr(T=1|T*=0,z) < Pr(T=1|T*=1,z) is enforced."""
        with pytest.raises(SpecValidationError) as exc_info:
            parse_spec(_binary_doc(misclassification=[[0.8, 0.1], [0.2, 0.9]]))

        assert exc_info.value.details["z"] == 0

    def test_probability_outside_open_unit_interval(self):
        """Test that treatment probabilities must lie strictly inside (0, 1)."""
        with pytest.raises(SpecValidationError):
            parse_spec(_binary_doc(pr_tstar=[0.0, 0.6, 0.4, 0.9]))

    def test_mixing_rows_must_sum_to_one(self, dgp_m):
        """Test the stochasticity check of mixture worlds."""
        doc = dgp_m.model_dump()
        doc["mixing"] = [[0.5, 0.5, 0.5, 0.5]] * 4

        with pytest.raises(SpecValidationError):
            parse_spec(doc)

    def test_missing_file(self, tmp_path):
        """Test that a missing file is an input error."""
        with pytest.raises(InputSchemaError):
            load_spec(tmp_path / "absent.json")

    def test_embedding_needs_exogenous_world(self, dgp_violating):
        """Test that worlds with offsets do not embed as mixtures."""
        with pytest.raises(SpecValidationError):
            DgpSpecK.from_binary(dgp_violating, [2.0])


class TestBinaryOracle:
    """Tests for the exact moments of binary worlds."""

    def test_known_moment(self, oracle_a):
        """Test E[YT|Z=1,V=1] = 0.1 * 0.2 * 1.5 + 0.9 * 0.9 * 2.5 = 2.055."""
        assert oracle_a.eyt(1, 1) == pytest.approx(2.055, abs=1e-12)

    def test_observed_treatment_rate(self, dgp_a, oracle_a):
        """Test E[T|z,v] = (1 - p) e0 + p e1."""
        for z in (0, 1):
            for v in (0, 1):
                p = dgp_a.p_tstar(z, v)
                e0, e1 = dgp_a.misclassification[z]
                assert oracle_a.et(z, v) == pytest.approx((1 - p) * e0 + p * e1, abs=1e-12)

    def test_covariate_enters_intercept(self, dgp_a, dgp_a_x):
        """Test that conditioning on X shifts E[Y] by the slope."""
        at_zero = oracle_moments(dgp_a_x, x=0.0)
        at_one = oracle_moments(dgp_a_x, x=1.0)

        assert at_one.ey(0, 0) - at_zero.ey(0, 0) == pytest.approx(dgp_a_x.x_slope)

    def test_offsets_break_mean_zero(self, dgp_a, dgp_violating):
        """Test that E[eps|T*] offsets move E[Y] away from the exogenous world."""
        exogenous = oracle_moments(dgp_a)
        endogenous = oracle_moments(dgp_violating)

        assert endogenous.ey(1, 1) - exogenous.ey(1, 1) == pytest.approx(0.9 * 0.3, abs=1e-12)

    def test_true_vectors(self, dgp_a):
        """Test phi and theta implied by the world."""
        phi = true_solution(dgp_a)
        theta = true_parameters(dgp_a)

        np.testing.assert_allclose(phi.outcome_means(0), [1.0, 3.0])
        assert phi.pr_tstar(1, 0) == pytest.approx(0.6)
        np.testing.assert_allclose(theta.beta, [2.0, 1.0])


class TestMixtureOracle:
    """Tests for exact mixture quantities."""

    def test_outcome_distribution_rows_sum_to_one(self, dgp_m):
        """Test that interval probabilities form a distribution per state."""
        dist = oracle_outcome_distribution(dgp_m, dgp_m.partition)

        np.testing.assert_allclose(dist.sum(axis=2), 1.0, atol=1e-12)

    def test_first_row_of_q_is_interval_mass(self, dgp_m, oracle_m):
        """Test that the first row holds Pr(Y in interval j | cell)."""
        dist = oracle_outcome_distribution(dgp_m, dgp_m.partition)
        mixing = dgp_m.mixing_array()
        cell = CellIndex(1, 0)
        expected = mixing[cell.position] @ dist[0][:, :3]

        np.testing.assert_allclose(oracle_m.q(1, 0)[0, 1:], expected, atol=1e-12)

    def test_true_effects_identity(self, dgp_m):
        """Test that the world's ATE mixes TT and TUT."""
        truth = true_effects(dgp_m)
        by_state = dgp_m.pr_state_given_v()

        for v in (0, 1):
            p = by_state[v][1::2].sum()
            assert truth["ate"][v] == pytest.approx(p * truth["tt"][v] + (1 - p) * truth["tut"][v])

    def test_missing_partition(self, dgp_m):
        """Test that the oracle needs cut points."""
        bare = dgp_m.model_copy(update={"partition": None})

        with pytest.raises(SpecValidationError):
            oracle_moments(bare)


class TestSimulate:
    """Tests for the samplers."""

    def test_deterministic(self, dgp_a):
        """Test that identical seeds give identical samples."""
        first = simulate(dgp_a, 500, seed=42)
        second = simulate(dgp_a, 500, seed=42)

        np.testing.assert_array_equal(first.y, second.y)
        np.testing.assert_array_equal(first.t, second.t)
        np.testing.assert_array_equal(first.latent["tstar"], second.latent["tstar"])

    def test_replications_differ(self, dgp_a):
        """Test that replication indices select independent streams."""
        first = simulate(dgp_a, 500, seed=42, replication=0)
        second = simulate(dgp_a, 500, seed=42, replication=1)

        assert not np.array_equal(first.y, second.y)

    def test_without_latent(self, dgp_m):
        """Test that the latent side channel can be dropped."""
        table = simulate(dgp_m, 100, seed=1, with_latent=False)

        assert table.latent == {}
        assert table.u is not None

    def test_sample_size(self, dgp_a):
        """Test that the sample size must be positive."""
        with pytest.raises(SpecValidationError):
            simulate(dgp_a, 0, seed=1)

    def test_covariate_column(self, dgp_a_x):
        """Test that worlds with a slope draw X in [0, 1)."""
        table = simulate(dgp_a_x, 200, seed=2)

        assert table.dim_x == 1
        assert table.x.min() >= 0.0 and table.x.max() < 1.0

    def test_misclassification_rates(self, dgp_a, sample_a):
        """Test observed Pr(T=1|T*,Z) against the world's rates."""
        tstar = sample_a.latent["tstar"]
        for z in (0, 1):
            for t in (0, 1):
                mask = (sample_a.z == z) & (tstar == t)
                rate = sample_a.t[mask].mean()
                se = np.sqrt(rate * (1 - rate) / mask.sum())
                assert abs(rate - dgp_a.misclassification[z][t]) <= 4.5 * se

    def test_potential_outcomes(self, dgp_m):
        """Test that Y_1 - Y_0 equals beta(U*, V) row by row."""
        draws = simulate_potential_outcomes(dgp_m, 1000, seed=9)
        beta = np.asarray(dgp_m.beta)

        np.testing.assert_allclose(draws["y1"] - draws["y0"], beta[draws["ustar"], draws["v"]])


class TestVerifyAssumptions:
    """Tests for the exact assumption report."""

    def test_dgp_a_passes(self, dgp_a):
        """Test that the reference world satisfies every clause."""
        report = verify_assumptions(dgp_a)

        assert report.passed
        assert report.regime == "mean_exogenous"
        np.testing.assert_allclose(report.cross_ratios, [1.0 / 3.0, 0.75])

    def test_violating_world(self, dgp_violating):
        """Test that E[eps|Z,V] != 0 is reported."""
        report = verify_assumptions(dgp_violating)

        assert "model_mean_zero" in report.failures()
        assert report.regime == "endogenous_offsets"

    def test_z_irrelevant(self, dgp_z_irrelevant):
        """Test the instrument relevance clause."""
        assert "1(c)" in verify_assumptions(dgp_z_irrelevant).failures()

    def test_dgp_b_uses_z_free_route(self, dgp_b):
        """Test that DGP-B fails the cross-ratio clause and satisfies Z-free misclassification."""
        report = verify_assumptions(dgp_b)

        assert "2" in report.failures()
        assert report.alternatives["z_free_misclassification"].passed

    def test_mixture_worlds(self, dgp_m, dgp_m_nondominant, dgp_m_irrelevant_u):
        """Test the mixture clauses on the positive and negative controls."""
        assert verify_assumptions(dgp_m).passed
        assert "4(e)" in verify_assumptions(dgp_m_nondominant).failures()
        assert "4(c)" in verify_assumptions(dgp_m_irrelevant_u).failures()


class TestOracleIndependence:
    """Tests for the separation between oracle and identification code."""

    def test_dgp_module_does_not_import_identification(self):
        """Test that the oracle never imports the identification services."""
        tree = ast.parse(Path(dgp_module.__file__).read_text(encoding="utf-8"))
        imported = set()
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom) and node.module:
                imported.add(node.module)
            elif isinstance(node, ast.Import):
                imported.update(alias.name for alias in node.names)

        assert not {"services.ident2", "services.identk", "services.mde"} & imported
