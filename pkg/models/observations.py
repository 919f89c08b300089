"""Observation records and the columnar table the estimators work on."""

import math
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator

from models.base import DomainModel, FloatArray

LATENT_PREFIX = "latent_"
REQUIRED_COLUMNS = ("y", "t", "z", "v")


class Observation(DomainModel):
    """A single observed row (Y, T, Z, V, X, U)."""

    y: float = Field(..., description="Outcome")
    t: int = Field(..., description="Reported binary treatment")
    z: int = Field(..., description="Binary instrument")
    v: int = Field(..., description="Binary covariate excluded from misclassification")
    x: Optional[List[float]] = Field(default=None, description="Optional covariate vector")
    u: Optional[int] = Field(default=None, description="Optional discrete proxy code")

    @field_validator("t", "z", "v")
    @classmethod
    def binary(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError("must be 0 or 1")
        return value

    @field_validator("y")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("outcome must be finite")
        return value

    @field_validator("u")
    @classmethod
    def non_negative(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 0:
            raise ValueError("proxy code must be non-negative")
        return value


def _binary_column(value) -> np.ndarray:
    array = np.asarray(value)
    if array.ndim != 1:
        raise ValueError("binary columns must be one-dimensional")
    if array.size and not np.isin(array, (0, 1)).all():
        raise ValueError("binary columns must hold only 0 and 1")
    array = array.astype(np.int8, copy=True)
    array.setflags(write=False)
    return array


class ObservationTable(DomainModel):
    """Columnar observation sample.

    ``y`` may hold non-finite values; estimators reject them with
    ``NonFiniteInputError`` so that the failure carries a domain error code.
    """

    y: FloatArray
    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    x: Optional[FloatArray] = None
    u: Optional[np.ndarray] = None
    latent: Dict[str, np.ndarray] = Field(default_factory=dict)

    @field_validator("t", "z", "v", mode="before")
    @classmethod
    def coerce_binary(cls, value):
        return _binary_column(value)

    @field_validator("x")
    @classmethod
    def two_dimensional(cls, value):
        if value is not None and value.ndim == 1:
            return _reshape_readonly(value)
        return value

    @field_validator("u", mode="before")
    @classmethod
    def coerce_proxy(cls, value):
        if value is None:
            return None
        array = np.asarray(value)
        if array.size and (array < 0).any():
            raise ValueError("proxy codes must be non-negative")
        array = array.astype(np.int64, copy=True)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def aligned(self) -> "ObservationTable":
        n = self.y.shape[0]
        if self.y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        for name in ("t", "z", "v"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"column {name} has a different length than y")
        if self.x is not None and self.x.shape[0] != n:
            raise ValueError("x has a different number of rows than y")
        if self.u is not None and self.u.shape[0] != n:
            raise ValueError("u has a different length than y")
        for name, column in self.latent.items():
            if np.asarray(column).shape[0] != n:
                raise ValueError(f"latent column {name} has a different length than y")
        return self

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def dim_x(self) -> int:
        return 0 if self.x is None else int(self.x.shape[1])

    def select(self, mask: np.ndarray) -> "ObservationTable":
        """Return the rows where ``mask`` is true."""
        return ObservationTable(
            y=self.y[mask],
            t=self.t[mask],
            z=self.z[mask],
            v=self.v[mask],
            x=None if self.x is None else self.x[mask],
            u=None if self.u is None else self.u[mask],
            latent={k: np.asarray(c)[mask] for k, c in self.latent.items()},
        )

    def permute(self, order: np.ndarray) -> "ObservationTable":
        return self.select(np.asarray(order))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ObservationTable":
        """Build a table from a frame with columns y, t, z, v, x_1..x_d, u, latent_*."""
        x_columns = sorted(
            (c for c in frame.columns if c.startswith("x_")),
            key=lambda c: int(c.split("_", 1)[1]),
        )
        return cls(
            y=frame["y"].to_numpy(dtype=float),
            t=frame["t"].to_numpy(),
            z=frame["z"].to_numpy(),
            v=frame["v"].to_numpy(),
            x=frame[x_columns].to_numpy(dtype=float) if x_columns else None,
            u=frame["u"].to_numpy() if "u" in frame.columns else None,
            latent={
                c[len(LATENT_PREFIX):]: frame[c].to_numpy()
                for c in frame.columns if c.startswith(LATENT_PREFIX)
            },
        )

    def to_frame(self, include_latent: bool = False) -> pd.DataFrame:
        columns = {"y": self.y, "t": self.t, "z": self.z, "v": self.v}
        if self.x is not None:
            for j in range(self.dim_x):
                columns[f"x_{j + 1}"] = self.x[:, j]
        if self.u is not None:
            columns["u"] = self.u
        if include_latent:
            for name, column in self.latent.items():
                columns[f"{LATENT_PREFIX}{name}"] = column
        return pd.DataFrame(columns)

    @classmethod
    def from_observations(cls, rows: Sequence[Observation]) -> "ObservationTable":
        rows = list(rows)
        has_x = any(r.x is not None for r in rows)
        has_u = any(r.u is not None for r in rows)
        return cls(
            y=np.array([r.y for r in rows], dtype=float),
            t=np.array([r.t for r in rows]),
            z=np.array([r.z for r in rows]),
            v=np.array([r.v for r in rows]),
            x=np.array([r.x for r in rows], dtype=float) if has_x else None,
            u=np.array([r.u for r in rows]) if has_u else None,
        )

    def to_observations(self) -> List[Observation]:
        return [
            Observation(
                y=float(self.y[i]),
                t=int(self.t[i]),
                z=int(self.z[i]),
                v=int(self.v[i]),
                x=None if self.x is None else self.x[i].tolist(),
                u=None if self.u is None else int(self.u[i]),
            )
            for i in range(self.n)
        ]


def _reshape_readonly(x: np.ndarray) -> np.ndarray:
    array = np.array(x, dtype=float).reshape(-1, 1)
    array.setflags(write=False)
    return array


ObservationInput = Union[ObservationTable, Iterable[Observation], pd.DataFrame]


def coerce(data: ObservationInput) -> ObservationTable:
    """Accept a table, a frame, or a list of ``Observation`` rows."""
    if isinstance(data, ObservationTable):
        return data
    if isinstance(data, pd.DataFrame):
        return ObservationTable.from_frame(data)
    return ObservationTable.from_observations(list(data))
