"""Tests for structured logging."""

import json

import numpy as np
import structlog

from utils.exceptions import SingularQError
from utils.logging_config import (
    _to_native,
    configure_logging,
    get_logger,
    log_command,
    log_command_result,
    log_error,
)


def _records(err: str):
    return [json.loads(line) for line in err.splitlines() if line.startswith("{")]


class TestNativeValues:
    """Tests for the numpy conversion processor."""

    def test_scalars_and_arrays(self):
        """Test that numpy values become plain Python values."""
        event = _to_native(None, "info", {"gap": np.float64(0.5), "k": np.int64(4), "values": np.arange(3)})

        assert event == {"gap": 0.5, "k": 4, "values": [0, 1, 2]}
        assert type(event["k"]) is int


class TestCommandContext:
    """Tests for the per-command log context."""

    def test_command_and_seed_are_bound(self, capsys):
        """Test that records inside a command carry the command name and seed."""
        configure_logging("INFO")
        log_command("identify", seed=3, mode="prop1")
        get_logger("tests").info("Stage done", eigenvalues=np.array([1.0 / 3.0, 0.75]))
        log_command_result("identify", 0, 0.01)

        records = _records(capsys.readouterr().err)
        stage = next(r for r in records if r["event"] == "Stage done")
        assert stage["command"] == "identify"
        assert stage["seed"] == 3
        assert stage["eigenvalues"] == [1.0 / 3.0, 0.75]
        assert records[-1]["exit_code"] == 0
        assert structlog.contextvars.get_contextvars() == {}

    def test_error_record(self, capsys):
        """Test that errors are logged with their code and details."""
        configure_logging("INFO")
        log_error(SingularQError("singular", details={"cell": "z0v0"}))

        record = _records(capsys.readouterr().err)[-1]
        assert record["error_code"] == "SingularQ"
        assert record["details"] == {"cell": "z0v0"}
        assert record["level"] == "error"
