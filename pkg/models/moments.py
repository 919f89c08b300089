"""Conditional moment vectors, their covariance, and kernel settings."""

import math
from typing import Dict, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from models.base import DomainModel, FloatArray
from utils.exceptions import BadBandwidthError, InputSchemaError

MOMENT_NAMES = ("EY", "ET", "EYT")
SCHEMA_VERSION = 1


class CellIndex(NamedTuple):
    """An instrument/covariate cell (z, v)."""

    z: int
    v: int

    @property
    def position(self) -> int:
        """Position in the canonical order w1=(0,0), w2=(1,0), w3=(0,1), w4=(1,1)."""
        return self.z + 2 * self.v

    @property
    def label(self) -> str:
        return f"z{self.z}v{self.v}"


CELLS: Tuple[CellIndex, ...] = (
    CellIndex(0, 0),
    CellIndex(1, 0),
    CellIndex(0, 1),
    CellIndex(1, 1),
)


def moment_index(cell: CellIndex, name: str) -> int:
    """Flat index of a moment within the 12-vector."""
    return 3 * cell.position + MOMENT_NAMES.index(name)


class MomentVector(DomainModel):
    """The 12 conditional moments (E[Y], E[T], E[YT]) per cell, canonical order."""

    values: FloatArray
    rate: float = Field(default=1.0, description="Value of the convergence rate a_n")
    rate_label: Literal["population", "sqrt(n)", "sqrt(nh)"] = "population"
    cell_counts: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    n: int = 0
    degenerate_cells: Tuple[str, ...] = ()

    @field_validator("values")
    @classmethod
    def twelve(cls, value: np.ndarray) -> np.ndarray:
        if value.shape != (12,):
            raise ValueError(f"moment vector must have 12 entries, got shape {value.shape}")
        return value

    @classmethod
    def from_cells(cls, table, **kwargs) -> "MomentVector":
        """Build from a 4x3 array (cells x (EY, ET, EYT))."""
        return cls(values=np.asarray(table, dtype=float).reshape(12), **kwargs)

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(4, 3)

    def cell(self, cell: CellIndex) -> np.ndarray:
        return self.as_matrix()[cell.position]

    def ey(self, z: int, v: int) -> float:
        return float(self.values[moment_index(CellIndex(z, v), "EY")])

    def et(self, z: int, v: int) -> float:
        return float(self.values[moment_index(CellIndex(z, v), "ET")])

    def eyt(self, z: int, v: int) -> float:
        return float(self.values[moment_index(CellIndex(z, v), "EYT")])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def to_document(self) -> Dict:
        return {
            "kind": "moment_vector",
            "schema_version": SCHEMA_VERSION,
            "cell_order": [c.label for c in CELLS],
            "cells": {
                c.label: dict(zip(MOMENT_NAMES, self.cell(c).tolist())) for c in CELLS
            },
            "values": self.values.tolist(),
            "rate": self.rate,
            "rate_label": self.rate_label,
            "cell_counts": list(self.cell_counts),
            "n": self.n,
            "degenerate_cells": list(self.degenerate_cells),
        }

    @classmethod
    def from_document(cls, doc: Dict) -> "MomentVector":
        """Parse a moment-vector document; ``cells`` wins over ``values`` when both exist."""
        try:
            if "cells" in doc:
                table = [[float(doc["cells"][c.label][k]) for k in MOMENT_NAMES] for c in CELLS]
                values = np.asarray(table).reshape(12)
            else:
                values = np.asarray(doc["values"], dtype=float)
            return cls(
                values=values,
                rate=float(doc.get("rate", 1.0)),
                rate_label=doc.get("rate_label", "population"),
                cell_counts=tuple(doc.get("cell_counts", (0.0,) * 4)),
                n=int(doc.get("n", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputSchemaError(
                "Malformed moment vector document",
                details={"reason": str(e)},
            )


class MomentCovariance(DomainModel):
    """12x12 block-diagonal asymptotic covariance of the scaled moment vector."""

    matrix: FloatArray

    @model_validator(mode="after")
    def block_diagonal(self) -> "MomentCovariance":
        m = self.matrix
        if m.shape != (12, 12):
            raise ValueError(f"moment covariance must be 12x12, got {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(m).max(initial=0.0)))):
            raise ValueError("moment covariance must be symmetric")
        mask = np.kron(np.eye(4), np.ones((3, 3))) == 0
        if np.any(m[mask] != 0.0):
            raise ValueError("off-block entries must be exactly zero")
        return self

    @classmethod
    def from_blocks(cls, blocks) -> "MomentCovariance":
        matrix = np.zeros((12, 12))
        for j, block in enumerate(blocks):
            block = np.asarray(block, dtype=float)
            matrix[3 * j:3 * j + 3, 3 * j:3 * j + 3] = 0.5 * (block + block.T)
        return cls(matrix=matrix)

    @classmethod
    def zeros(cls) -> "MomentCovariance":
        return cls(matrix=np.zeros((12, 12)))

    def block(self, cell: CellIndex) -> np.ndarray:
        j = cell.position
        return self.matrix[3 * j:3 * j + 3, 3 * j:3 * j + 3]

    def min_block_eigenvalue(self) -> float:
        return float(min(np.linalg.eigvalsh(self.block(c)).min() for c in CELLS))

    def to_document(self) -> Dict:
        return {
            "kind": "moment_covariance",
            "schema_version": SCHEMA_VERSION,
            "cell_order": [c.label for c in CELLS],
            "blocks": {c.label: self.block(c).tolist() for c in CELLS},
        }

    @classmethod
    def from_document(cls, doc: Dict) -> "MomentCovariance":
        try:
            return cls.from_blocks([doc["blocks"][c.label] for c in CELLS])
        except (KeyError, TypeError, ValueError) as e:
            raise InputSchemaError("Malformed moment covariance document", details={"reason": str(e)})


_GAUSSIAN_ROUGHNESS = 1.0 / (2.0 * math.sqrt(math.pi))
_EPANECHNIKOV_ROUGHNESS = 0.6


class KernelConfig(DomainModel):
    """Kernel family and bandwidth for kernel-smoothed moments.

    ``bandwidth=None`` selects the rule of thumb at estimation time.
    """

    family: Literal["gaussian", "epanechnikov"] = "gaussian"
    bandwidth: Optional[float] = None

    @field_validator("bandwidth")
    @classmethod
    def positive(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not (value > 0 and math.isfinite(value)):
            raise BadBandwidthError(
                f"Bandwidth must be positive and finite, got {value}",
                details={"bandwidth": value},
            )
        return value

    @property
    def roughness(self) -> float:
        """One-dimensional integral of K(s)^2."""
        return _GAUSSIAN_ROUGHNESS if self.family == "gaussian" else _EPANECHNIKOV_ROUGHNESS

    def squared_integral(self, dim: int) -> float:
        """Integral of the squared product kernel in ``dim`` dimensions."""
        return self.roughness ** dim

    def weights(self, scaled: np.ndarray) -> np.ndarray:
        """Product-kernel weights for an (n, d) array of (X_i - x) / h."""
        if self.family == "gaussian":
            per_coord = np.exp(-0.5 * scaled ** 2) / math.sqrt(2.0 * math.pi)
        else:
            per_coord = np.where(np.abs(scaled) <= 1.0, 0.75 * (1.0 - scaled ** 2), 0.0)
        return np.prod(per_coord, axis=1)
