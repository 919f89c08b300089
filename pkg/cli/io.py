"""File ingestion and report writing for the command-line front end."""

import json
import sys
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from models.moments import MomentVector
from models.observations import REQUIRED_COLUMNS, ObservationTable
from services.dgp import AnySpec, parse_spec
from utils.exceptions import InputSchemaError
from utils.logging_config import get_logger


logger = get_logger(__name__)


class LoadedInput(NamedTuple):
    """What an input file turned out to be."""

    kind: str  # observations | moments | spec
    payload: Union[ObservationTable, MomentVector, AnySpec]


def read_observations(path: Union[str, Path]) -> ObservationTable:
    """
    Read a CSV sample with a header row.

    Columns y, t, z, v are mandatory; x_1..x_d, u and latent_* are optional.

    Raises:
        InputSchemaError: If the file is unreadable or violates the column contract
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputSchemaError(
            f"Could not parse CSV {path}",
            details={"path": str(path), "reason": str(e)},
        )

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise InputSchemaError(
            f"CSV {path} lacks required columns: {', '.join(missing)}",
            details={"path": str(path), "missing": missing, "columns": list(frame.columns)},
        )
    try:
        table = ObservationTable.from_frame(frame)
    except (ValidationError, ValueError) as e:
        raise InputSchemaError(
            f"CSV {path} does not match the observation schema",
            details={"path": str(path), "reason": str(e)},
        )
    logger.info("Observations loaded", path=str(path), n=table.n, dim_x=table.dim_x)
    return table


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON object; malformed documents are schema errors."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as e:
        raise InputSchemaError(
            f"Could not parse JSON {path}",
            details={"path": str(path), "reason": str(e)},
        )
    if not isinstance(doc, dict):
        raise InputSchemaError(f"JSON {path} must hold an object", details={"path": str(path)})
    return doc


def load_input(path: Optional[str]) -> LoadedInput:
    """
    Load a CSV sample, a moment-vector document or a DGP document.

    JSON inputs are dispatched on their ``kind`` field.
    """
    if path is None:
        raise InputSchemaError("An --input file is required")
    if Path(path).suffix.lower() == ".csv":
        return LoadedInput("observations", read_observations(path))

    doc = read_json(path)
    kind = doc.get("kind")
    if kind == "moment_vector":
        return LoadedInput("moments", MomentVector.from_document(doc))
    if kind in ("dgp_spec2", "dgp_spec_k"):
        return LoadedInput("spec", parse_spec(doc))
    raise InputSchemaError(
        f"Unrecognized input kind {kind!r}",
        details={"path": path, "allowed": ["moment_vector", "dgp_spec2", "dgp_spec_k", ".csv"]},
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(doc: Dict[str, Any], path: Optional[str] = None) -> None:
    """Write a report with sorted keys; stdout when ``path`` is None."""
    text = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(path).write_text(text, encoding="utf-8")
    logger.info("Report written", path=path)


def write_csv(frame: pd.DataFrame, path: Optional[str] = None) -> None:
    """Write a frame as UTF-8 CSV with full float precision; stdout when ``path`` is None."""
    if path is None:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g", lineterminator="\n")
        sys.stdout.flush()
        return
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    logger.info("Sample written", path=path, rows=len(frame))
