"""Logging configuration for the pipeline and its command-line front end."""

import logging
import sys
from typing import Any, Dict, Optional

import numpy as np
import structlog


def _to_native(_, __, event_dict: Dict[str, Any]) -> Dict[str, Any]:
    """Turn numpy scalars and arrays into JSON-native values."""
    for key, value in event_dict.items():
        if isinstance(value, np.ndarray):
            event_dict[key] = value.tolist()
        elif isinstance(value, np.generic):
            event_dict[key] = value.item()
    return event_dict


def configure_logging(log_level: str = "INFO") -> None:
    """Configure structured logging for the application.

    Log records go to stderr so that CSV and JSON reports can be piped from
    stdout. Context bound by ``log_command`` is merged into every record
    until ``log_command_result`` clears it.
    """
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, log_level.upper()),
        force=True,
    )

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            _to_native,
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def get_logger(name: str) -> structlog.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


def log_command(command: str, seed: Optional[int] = None, **kwargs) -> None:
    """Log a CLI command invocation and bind the command and seed to later records."""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(command=command, seed=seed)
    get_logger("cli.command").info("Command started", **kwargs)


def log_command_result(command: str, exit_code: int, duration: float) -> None:
    """Log the outcome of a CLI command and drop its bound context."""
    get_logger("cli.result").info(
        "Command finished",
        exit_code=exit_code,
        duration_ms=round(duration * 1000, 2),
    )
    structlog.contextvars.clear_contextvars()


def log_error(error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
    """Log a failure with its machine-readable code and details."""
    get_logger("cli.error").error(
        "Error occurred",
        error_type=type(error).__name__,
        error_code=getattr(error, "code", None),
        error_message=str(error),
        details=getattr(error, "details", None),
        context=context or {},
    )


def log_stage(stage: str, operation: str, duration: float, success: bool, **kwargs) -> None:
    """Log timing of a pipeline stage (moments, identification, estimation, montecarlo)."""
    get_logger(f"{stage}.stage").info(
        f"{stage.title()} stage",
        operation=operation,
        duration_ms=round(duration * 1000, 2),
        success=success,
        **kwargs
    )
