"""Parameter vectors of the 12-equation system and the estimation report."""

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator

from models.base import DomainModel, FloatArray
from models.identification import DecompositionSet, Diagnostics

PHI_NAMES: Tuple[str, ...] = (
    "EY|T*=0,v=0", "EY|T*=1,v=0", "EY|T*=0,v=1", "EY|T*=1,v=1",
    "Pr(T*=1|z=0,v=0)", "Pr(T*=1|z=1,v=0)", "Pr(T*=1|z=0,v=1)", "Pr(T*=1|z=1,v=1)",
    "ET|T*=0,z=0", "ET|T*=1,z=0", "ET|T*=0,z=1", "ET|T*=1,z=1",
)
THETA_NAMES: Tuple[str, ...] = (
    "alpha(v=0)", "beta(v=0)", "alpha(v=1)", "beta(v=1)",
) + PHI_NAMES[4:]

# Coordinates of phi/theta that are probabilities.
PROBABILITY_SLICE = slice(4, 12)


def _twelve(value: np.ndarray) -> np.ndarray:
    if value.shape != (12,):
        raise ValueError(f"expected 12 entries, got shape {value.shape}")
    return value


class SystemSolution(DomainModel):
    """phi: the 12 unknowns of the moment system, in ``PHI_NAMES`` order."""

    values: FloatArray

    @field_validator("values")
    @classmethod
    def twelve(cls, value: np.ndarray) -> np.ndarray:
        return _twelve(value)

    def outcome_means(self, v: int) -> np.ndarray:
        return self.values[2 * v:2 * v + 2]

    def pr_tstar(self, z: int, v: int) -> float:
        return float(self.values[4 + z + 2 * v])

    def emission(self, z: int) -> np.ndarray:
        return self.values[8 + 2 * z:10 + 2 * z]

    def probabilities_in_unit_interval(self, slack: float = 0.0) -> bool:
        p = self.values[PROBABILITY_SLICE]
        return bool(((p >= -slack) & (p <= 1.0 + slack)).all())

    @classmethod
    def from_decomposition(cls, decomp: DecompositionSet) -> "SystemSolution":
        return cls(values=np.concatenate([
            decomp.outcome_means.reshape(4),
            decomp.pr_tstar,
            decomp.misclassification.reshape(4),
        ]))

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(PHI_NAMES, self.values.tolist()))


class ModelParams(DomainModel):
    """theta: alpha, beta per v followed by the probability coordinates of phi."""

    values: FloatArray

    @field_validator("values")
    @classmethod
    def twelve(cls, value: np.ndarray) -> np.ndarray:
        return _twelve(value)

    @property
    def alpha(self) -> np.ndarray:
        return self.values[[0, 2]]

    @property
    def beta(self) -> np.ndarray:
        return self.values[[1, 3]]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(THETA_NAMES, self.values.tolist()))


class EstimateReport(DomainModel):
    """Minimum-distance estimates with delta-method inference."""

    theta: ModelParams
    phi: SystemSolution
    cov_theta: FloatArray = Field(..., description="Asymptotic covariance of a_n (theta_hat - theta)")
    cov_phi: FloatArray = Field(..., description="Asymptotic covariance of a_n (phi_hat - phi)")
    se_theta: FloatArray
    se_phi: FloatArray
    rate: float
    rate_label: str
    objective: float = Field(..., ge=0)
    iterations: int
    initialization: Literal["closed_form", "fallback"]
    weighted: bool = False
    diagnostics: Optional[Diagnostics] = None
    trace: List[float] = Field(default_factory=list, description="Objective value per accepted step")

    @property
    def trace_length(self) -> int:
        return len(self.trace)

    def to_document(self) -> Dict:
        doc = {
            "kind": "estimate_report",
            "theta": self.theta.as_dict(),
            "phi": self.phi.as_dict(),
            "se_theta": dict(zip(THETA_NAMES, self.se_theta.tolist())),
            "se_phi": dict(zip(PHI_NAMES, self.se_phi.tolist())),
            "cov_theta": self.cov_theta.tolist(),
            "cov_phi": self.cov_phi.tolist(),
            "rate": self.rate,
            "rate_label": self.rate_label,
            "objective": self.objective,
            "iterations": self.iterations,
            "initialization": self.initialization,
            "weighted": self.weighted,
            "trace_length": self.trace_length,
        }
        if self.diagnostics is not None:
            doc["diagnostics"] = self.diagnostics.model_dump(mode="json")
        return doc
