"""Pytest configuration and fixtures for testing."""

import json

import pytest

from services.dgp import load_fixture, oracle_moments, simulate


# =================================================================
# BUNDLED WORLDS
# =================================================================
@pytest.fixture(scope="session")
def dgp_a():
    """Binary world with Z-dependent misclassification (distinct cross ratios 1/3 and 3/4)."""
    return load_fixture("dgp_a")


@pytest.fixture(scope="session")
def dgp_a_x():
    """DGP-A with a uniform covariate entering the intercept."""
    return load_fixture("dgp_a_x")


@pytest.fixture(scope="session")
def dgp_b():
    """Binary world with Z-free misclassification and V-free treatment probabilities."""
    return load_fixture("dgp_b")


@pytest.fixture(scope="session")
def dgp_c():
    """Binary world that both closed-form routes can identify."""
    return load_fixture("dgp_c")


@pytest.fixture(scope="session")
def dgp_z_irrelevant():
    return load_fixture("dgp_z_irrelevant")


@pytest.fixture(scope="session")
def dgp_violating():
    return load_fixture("dgp_violating")


@pytest.fixture(scope="session")
def dgp_m():
    """Mixture world with two latent types (K = 4)."""
    return load_fixture("dgp_m")


@pytest.fixture(scope="session")
def dgp_m_nondominant():
    return load_fixture("dgp_m_nondominant")


@pytest.fixture(scope="session")
def dgp_m_irrelevant_u():
    return load_fixture("dgp_m_irrelevant_u")


# =================================================================
# ORACLES AND SAMPLES
# =================================================================
@pytest.fixture(scope="session")
def oracle_a(dgp_a):
    return oracle_moments(dgp_a)


@pytest.fixture(scope="session")
def oracle_m(dgp_m):
    return oracle_moments(dgp_m)


@pytest.fixture(scope="session")
def sample_a(dgp_a):
    """20,000 draws from DGP-A (seed 7)."""
    return simulate(dgp_a, 20_000, seed=7)


@pytest.fixture(scope="session")
def sample_a_x(dgp_a_x):
    """50,000 draws from DGP-A with X (seed 3)."""
    return simulate(dgp_a_x, 50_000, seed=3)


@pytest.fixture(scope="session")
def sample_m(dgp_m):
    """200,000 draws from DGP-M (seed 11)."""
    return simulate(dgp_m, 200_000, seed=11)


# =================================================================
# FILES
# =================================================================
@pytest.fixture
def write_json_file(tmp_path):
    """Write a document to a JSON file under tmp_path and return its path."""

    def _write(doc, name="input.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def sample_a_csv(tmp_path, sample_a):
    """DGP-A sample written as CSV."""
    path = tmp_path / "sample_a.csv"
    sample_a.to_frame().to_csv(path, index=False)
    return str(path)
