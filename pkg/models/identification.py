"""Types produced by the closed-form binary identification routes."""

from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from config.settings import settings
from models.base import DomainModel, FloatArray
from models.moments import CELLS, CellIndex


class Tolerances(DomainModel):
    """Numerical thresholds shared by the identification and estimation stages."""

    max_cond: float = Field(..., gt=0, description="Largest admissible condition number")
    eig_gap: float = Field(..., ge=0, description="Smallest admissible eigenvalue gap")
    label: float = Field(..., ge=0, description="Smallest admissible labeling margin")
    prob: float = Field(..., ge=0, description="Clamp slack for recovered probabilities")
    disc: float = Field(..., ge=0, description="Slack for negative discriminants")
    imag: float = Field(..., ge=0, description="Slack for imaginary eigen-parts")
    cross: float = Field(..., ge=0, description="Slack for the Z cross-check")
    relevance: float = Field(..., ge=0, description="Slack for 2x2 relevance gaps")

    @classmethod
    def identification(cls, **overrides) -> "Tolerances":
        """Exact-oracle regime."""
        return cls(**{**settings.identification_tolerances(), **overrides})

    @classmethod
    def estimation(cls, **overrides) -> "Tolerances":
        """Noisy sample-moment regime."""
        return cls(**{**settings.estimation_tolerances(), **overrides})


class QMatrixSet(DomainModel):
    """The four 2x2 matrices [[1, E[Y|z,v]], [E[T|z,v], E[YT|z,v]]] in canonical order."""

    matrices: FloatArray

    @field_validator("matrices")
    @classmethod
    def shape(cls, value: np.ndarray) -> np.ndarray:
        if value.shape != (4, 2, 2):
            raise ValueError(f"expected four 2x2 matrices, got shape {value.shape}")
        if np.any(value[:, 0, 0] != 1.0):
            raise ValueError("entry (1,1) of every Q matrix must be 1")
        return value

    def q(self, z: int, v: int) -> np.ndarray:
        return self.matrices[CellIndex(z, v).position]


class DecompositionSet(DomainModel):
    """Identified factors of Q(z,v) = L_T(z) diag(lam[z,v]) L_Y(v)^T plus alpha, beta.

    ``l_t[z]`` has rows (1, 1) and (E[T|T*=0,z], E[T|T*=1,z]); ``l_y[v]`` has rows
    (1, 1) and (E[Y|T*=0,v], E[Y|T*=1,v]); ``lam`` holds (Pr(T*=0|z,v),
    Pr(T*=1|z,v)) per cell in canonical order.
    """

    l_t: FloatArray
    l_y: FloatArray
    lam: FloatArray
    alpha: FloatArray
    beta: FloatArray
    route: Literal["prop1", "prop2"] = "prop1"

    @model_validator(mode="after")
    def shapes(self) -> "DecompositionSet":
        if self.l_t.shape != (2, 2, 2) or self.l_y.shape != (2, 2, 2):
            raise ValueError("L_T and L_Y must be stacks of two 2x2 matrices")
        if self.lam.shape != (4, 2):
            raise ValueError("lam must hold a diagonal pair per cell")
        if self.alpha.shape != (2,) or self.beta.shape != (2,):
            raise ValueError("alpha and beta must have one entry per v")
        return self

    def lambda_matrix(self, z: int, v: int) -> np.ndarray:
        return np.diag(self.lam[CellIndex(z, v).position])

    def reconstruct(self, z: int, v: int) -> np.ndarray:
        return self.l_t[z] @ self.lambda_matrix(z, v) @ self.l_y[v].T

    @property
    def misclassification(self) -> np.ndarray:
        """Pr(T=1|T*=t, z) indexed [z, t]."""
        return self.l_t[:, 1, :]

    @property
    def outcome_means(self) -> np.ndarray:
        """E[Y|T*=t, v] indexed [v, t]."""
        return self.l_y[:, 1, :]

    @property
    def pr_tstar(self) -> np.ndarray:
        """Pr(T*=1|z,v) in canonical cell order."""
        return self.lam[:, 1]

    def to_document(self) -> Dict:
        return {
            "kind": "decomposition",
            "route": self.route,
            "cell_order": [c.label for c in CELLS],
            "L_T": {f"z{z}": self.l_t[z].tolist() for z in (0, 1)},
            "L_Y": {f"v{v}": self.l_y[v].tolist() for v in (0, 1)},
            "Lambda": {c.label: self.lam[c.position].tolist() for c in CELLS},
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }


class Diagnostics(DomainModel):
    """Assumption margins measured during identification."""

    eigenvalue_gap: float
    cross_ratios: Tuple[float, float] = Field(..., description="Eigenvalues for T*=0 and T*=1")
    condition_numbers: Tuple[float, float, float, float]
    labeling_margin: float
    relevance_gaps_z: Tuple[float, float] = Field(
        ..., description="|Pr(T*=1|1,v) - Pr(T*=1|0,v)| for v=0,1"
    )
    relevance_gaps_v: Tuple[float, float] = Field(
        ..., description="|Pr(T*=1|z,1) - Pr(T*=1|z,0)| for z=0,1"
    )
    clamped: Tuple[str, ...] = ()
    lambda_v_discrepancy: Optional[float] = Field(
        default=None,
        description="Largest |Lambda(z,1) - Lambda(z,0)| on the Z-free misclassification route",
    )

    @model_validator(mode="after")
    def finite(self) -> "Diagnostics":
        values = [self.eigenvalue_gap, self.labeling_margin, *self.cross_ratios,
                  *self.condition_numbers, *self.relevance_gaps_z, *self.relevance_gaps_v]
        if not np.isfinite(values).all():
            raise ValueError("diagnostics must be finite")
        return self
