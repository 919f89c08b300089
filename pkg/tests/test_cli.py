"""Tests for the command-line front end."""

import json

import numpy as np
import pandas as pd
import pytest

from cli.commands import build_parser, main, resolve_config
from cli.schemas import REPORT_SCHEMA_VERSION, RunConfig, XHandling
from services.dgp import fixture_path, true_effects
from utils.exceptions import InputSchemaError


def _report(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


class TestRunConfig:
    """Tests for configuration parsing and precedence."""

    def test_x_handling_parse(self):
        """Test the none, discrete and kernel forms."""
        assert XHandling.parse("none").mode == "none"
        handling = XHandling.parse("kernel:0.5")
        assert handling.mode == "kernel"
        assert handling.scalar_or_vector == 0.5
        assert XHandling.parse("discrete:1,2").scalar_or_vector == [1.0, 2.0]

    def test_x_handling_rejects_garbage(self):
        """Test that malformed covariate handling is rejected."""
        with pytest.raises(ValueError):
            XHandling.parse("kernel")

    def test_unknown_tolerance(self):
        """Test that tolerance overrides must have known names."""
        with pytest.raises(ValueError):
            RunConfig(command="identify", tolerances={"gap": 1.0})

    def test_partition_needs_mixture_mode(self):
        """Test that cut points only apply to the mixture route."""
        with pytest.raises(ValueError):
            RunConfig(command="identify", mode="prop1", partition=[1.0, 2.0, 3.0])

    def test_simulate_needs_n(self):
        """Test that simulate requires a sample size."""
        with pytest.raises(ValueError):
            RunConfig(command="simulate")

    def test_precedence(self, write_json_file):
        """Test CLI flags over config file over settings defaults."""
        config_path = write_json_file(
            {"seed": 3, "mode": "prop2", "tolerances": {"eig_gap": 0.5, "prob": 0.1}}, name="run.json"
        )
        args = build_parser().parse_args(
            ["identify", "--config", config_path, "--seed", "9", "--tol-eig-gap", "0.25"]
        )
        config = resolve_config(args)

        assert config.seed == 9
        assert config.mode == "prop2"
        assert config.tolerances == {"eig_gap": 0.25, "prob": 0.1}
        assert config.kernel == "gaussian"

    def test_inconsistent_config_is_input_error(self):
        """Test that validation failures surface as input errors."""
        args = build_parser().parse_args(["simulate"])

        with pytest.raises(InputSchemaError):
            resolve_config(args)

    def test_workers_are_not_reported(self):
        """Test that the worker count stays out of the report."""
        dumped = RunConfig(command="identify", workers=4).model_dump(mode="json")

        assert "workers" not in dumped


class TestIdentifyCommand:
    """Tests for ``misclass identify``."""

    def test_oracle_moments(self, dgp_a, oracle_a, write_json_file, tmp_path):
        """Test recovery of DGP-A from an exact moment document."""
        source = write_json_file(oracle_a.to_document())
        out = tmp_path / "report.json"

        code = main(["identify", "--input", source, "--output", str(out)])
        report = _report(out)

        assert code == 0
        assert report["schema_version"] == REPORT_SCHEMA_VERSION
        assert report["status"] == "ok"
        assert report["result"]["regime"] == "identification"
        np.testing.assert_allclose(report["result"]["decomposition"]["alpha"], dgp_a.alpha, atol=1e-9)
        np.testing.assert_allclose(report["result"]["decomposition"]["beta"], dgp_a.beta, atol=1e-9)

    def test_dgp_input(self, tmp_path):
        """Test that a DGP document is identified through its oracle."""
        out = tmp_path / "report.json"

        code = main(["identify", "--input", str(fixture_path("dgp_b")), "--mode", "prop2", "--output", str(out)])

        assert code == 0
        assert _report(out)["result"]["decomposition"]["route"] == "prop2"

    def test_missing_column(self, sample_a, tmp_path):
        """Test that a CSV without t exits with the input-error code."""
        source = tmp_path / "no_t.csv"
        sample_a.to_frame().drop(columns=["t"]).to_csv(source, index=False)
        out = tmp_path / "report.json"

        code = main(["identify", "--input", str(source), "--output", str(out)])
        report = _report(out)

        assert code == 1
        assert report["status"] == "error"
        assert report["error"]["error"] == "InputSchema"
        assert report["error"]["details"]["missing"] == ["t"]

    def test_irrelevant_instrument(self, tmp_path):
        """Test that a failed identification exits with the mathematical-error code."""
        out = tmp_path / "report.json"

        code = main(["identify", "--input", str(fixture_path("dgp_z_irrelevant")), "--output", str(out)])

        assert code == 2
        assert _report(out)["error"]["error"] == "EigenvaluesNotDistinct"

    def test_nondominant_mixture(self, tmp_path):
        """Test that a mixture world without a dominant labeling exits with the mathematical-error code."""
        out = tmp_path / "report.json"

        code = main(["identify", "--input", str(fixture_path("dgp_m_nondominant")), "--mode", "mixture",
                     "--output", str(out)])
        report = _report(out)

        assert code == 2
        assert report["status"] == "error"
        assert report["result"] is None
        assert report["error"]["error"] == "NoDominantLabeling"

    def test_sample_uses_estimation_regime(self, sample_a_csv, tmp_path):
        """Test that sample moments are identified under the noisy-moment tolerances."""
        out = tmp_path / "report.json"

        code = main(["identify", "--input", sample_a_csv, "--output", str(out)])
        report = _report(out)

        assert code == 0
        assert report["result"]["regime"] == "estimation"
        assert report["result"]["moments"]["rate_label"] == "sqrt(n)"

    def test_mixture_dgp(self, dgp_m, tmp_path):
        """Test mixture identification of DGP-M from its oracle."""
        out = tmp_path / "report.json"

        code = main(["identify", "--input", str(fixture_path("dgp_m")), "--mode", "mixture", "--output", str(out)])
        result = _report(out)["result"]

        assert code == 0
        assert result["decomposition"]["k_u"] == 2
        np.testing.assert_allclose(result["decomposition"]["alpha_beta"]["beta"], dgp_m.beta, atol=1e-6)

    def test_invalid_spec(self, write_json_file, tmp_path):
        """Test that a DGP violating its invariants exits with code 1."""
        doc = json.loads(fixture_path("dgp_a").read_text(encoding="utf-8"))
        doc["misclassification"] = [[0.9, 0.1], [0.2, 0.9]]
        out = tmp_path / "report.json"

        code = main(["identify", "--input", write_json_file(doc), "--output", str(out)])

        assert code == 1
        assert _report(out)["error"]["error"] == "SpecValidation"

    def test_bad_arguments(self, capsys):
        """Test that argument errors print an error envelope and exit with code 1."""
        code = main(["identify", "--mode", "prop9"])
        report = json.loads(capsys.readouterr().out)

        assert code == 1
        assert report["status"] == "error"
        assert report["config"] is None
        assert report["command"] == "identify"


class TestSimulateCommand:
    """Tests for ``misclass simulate``."""

    def test_byte_stable(self, tmp_path):
        """Test that the same (spec, n, seed) writes identical bytes."""
        paths = [tmp_path / "first.csv", tmp_path / "second.csv"]
        for path in paths:
            code = main(["simulate", "--input", str(fixture_path("dgp_a")), "--n", "300", "--seed", "5",
                         "--output", str(path)])
            assert code == 0

        assert paths[0].read_bytes() == paths[1].read_bytes()
        frame = pd.read_csv(paths[0])
        assert list(frame.columns) == ["y", "t", "z", "v"]
        assert len(frame) == 300

    def test_latent_dump(self, tmp_path):
        """Test that --latent-dump adds the latent columns."""
        out = tmp_path / "sample.csv"

        main(["simulate", "--input", str(fixture_path("dgp_m")), "--n", "50", "--seed", "1",
              "--latent-dump", "--output", str(out)])
        frame = pd.read_csv(out)

        assert {"latent_tstar", "latent_ustar", "u"} <= set(frame.columns)

    def test_needs_dgp(self, oracle_a, write_json_file, capsys):
        """Test that simulate rejects a moment document."""
        code = main(["simulate", "--input", write_json_file(oracle_a.to_document()), "--n", "10"])

        assert code == 1
        assert json.loads(capsys.readouterr().out)["error"]["error"] == "InputSchema"


class TestEstimateAndEffectsCommands:
    """Tests for ``misclass estimate`` and ``misclass effects``."""

    def test_estimate_from_csv(self, dgp_a, sample_a_csv, tmp_path):
        """Test a minimum-distance fit on a CSV sample."""
        out = tmp_path / "report.json"

        code = main(["estimate", "--input", sample_a_csv, "--output", str(out)])
        estimate = _report(out)["result"]["estimate"]

        assert code == 0
        assert estimate["theta"]["beta(v=0)"] == pytest.approx(dgp_a.beta[0], abs=5 * estimate["se_theta"]["beta(v=0)"])

    def test_estimate_rejects_mixture(self, sample_a_csv, tmp_path):
        """Test that the mixture route has no minimum-distance fit."""
        out = tmp_path / "report.json"

        assert main(["estimate", "--input", sample_a_csv, "--mode", "mixture", "--output", str(out)]) == 1

    def test_binary_effects(self, dgp_a, tmp_path):
        """Test LATE = beta on the homogeneous binary world."""
        out = tmp_path / "report.json"

        code = main(["effects", "--input", str(fixture_path("dgp_a")), "--aggregate", "--output", str(out)])
        effects = _report(out)["result"]["effects"]

        assert code == 0
        np.testing.assert_allclose(effects["late"], dgp_a.beta, atol=1e-9)
        assert effects["aggregate"]["ate"] == pytest.approx(1.5, abs=1e-9)

    def test_mixture_effects(self, dgp_m, tmp_path):
        """Test mixture effects against the world's tables."""
        out = tmp_path / "report.json"

        code = main(["effects", "--input", str(fixture_path("dgp_m")), "--mode", "mixture", "--output", str(out)])
        effects = _report(out)["result"]["effects"]

        assert code == 0
        np.testing.assert_allclose(effects["ate"], true_effects(dgp_m)["ate"], atol=1e-6)


class TestMonteCarloCommand:
    """Tests for ``misclass montecarlo``."""

    def test_single_replication_has_no_coverage(self, tmp_path):
        """Test that one replication reports no SD and no coverage."""
        out = tmp_path / "report.json"

        code = main(["montecarlo", "--input", str(fixture_path("dgp_a")), "--n", "5000", "--reps", "1",
                     "--seed", "4", "--workers", "1", "--output", str(out)])
        result = _report(out)["result"]

        assert code == 0
        assert result["replications"] == 1
        assert result["succeeded"] == 1
        for parameter in result["parameters"]:
            assert parameter["coverage"] is None
            assert parameter["sd"] is None

    def test_worker_count_keeps_bytes(self, tmp_path):
        """Test that the report is byte-identical with one or two workers."""
        paths = [tmp_path / "serial.json", tmp_path / "pooled.json"]
        for workers, path in zip(("1", "2"), paths):
            code = main(["montecarlo", "--input", str(fixture_path("dgp_a")), "--n", "2000", "--reps", "3",
                         "--seed", "4", "--workers", workers, "--output", str(path)])
            assert code == 0

        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert _report(paths[0])["result"]["replications"] == 3
