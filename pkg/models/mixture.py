"""Types for the finite-mixture (latent type) identification route."""

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from models.base import DomainModel, FloatArray
from models.moments import CELLS, CellIndex


class MixtureSpecMeta(DomainModel):
    """State enumeration of S* = (U*, T*), U* major and T* minor."""

    k_u: int = Field(..., ge=1, description="Number of latent U* values")

    @property
    def k(self) -> int:
        return 2 * self.k_u

    @property
    def states(self) -> List[Tuple[int, int]]:
        return [(u, t) for u in range(self.k_u) for t in (0, 1)]

    @staticmethod
    def state_index(u: int, t: int) -> int:
        return 2 * u + t

    def state_label(self, index: int) -> str:
        u, t = self.states[index]
        return f"u{u}t{t}"


class Partition(DomainModel):
    """Cut points c_1 < ... < c_{K-1}.

    Interval j is (c_j, c_{j+1}] with c_0 = -inf and c_K = +inf.
    """

    cuts: FloatArray

    @field_validator("cuts")
    @classmethod
    def increasing(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 1:
            raise ValueError("cut points must be a flat list")
        if not np.isfinite(value).all():
            raise ValueError("cut points must be finite")
        if value.size > 1 and not (np.diff(value) > 0).all():
            raise ValueError("cut points must be strictly increasing")
        return value

    @property
    def k(self) -> int:
        return int(self.cuts.size + 1)

    def assign(self, y: np.ndarray) -> np.ndarray:
        """Interval index of each outcome."""
        return np.searchsorted(self.cuts, np.asarray(y, dtype=float), side="left")

    def bounds(self) -> List[Tuple[float, float]]:
        edges = np.concatenate(([-np.inf], self.cuts, [np.inf]))
        return [(float(edges[j]), float(edges[j + 1])) for j in range(self.k)]


class PartitionMoments(DomainModel):
    """Joint tables over (S, Y-interval) per (z, v) cell.

    ``joint[c, i, j]`` is Pr(S=s_i, Y in interval j | cell c) when ``kind`` is
    ``probability`` and E[Y 1{S=s_i} 1{Y in interval j} | cell c] when ``kind``
    is ``outcome``. All K states and all intervals of the partition are kept.
    """

    joint: FloatArray
    cuts: FloatArray
    kind: Literal["probability", "outcome"] = "probability"
    cell_counts: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def shapes(self) -> "PartitionMoments":
        if self.joint.ndim != 3 or self.joint.shape[0] != 4:
            raise ValueError("joint must have shape (4, K, M)")
        if self.joint.shape[2] != self.cuts.size + 1:
            raise ValueError("interval count does not match the partition")
        return self

    @property
    def k(self) -> int:
        return int(self.joint.shape[1])

    @property
    def m(self) -> int:
        return int(self.joint.shape[2])

    def table(self, z: int, v: int) -> np.ndarray:
        return self.joint[CellIndex(z, v).position]

    def stacked(self, z: int, v: int) -> np.ndarray:
        """K x M matrix: interval totals on top of the first K-1 state rows."""
        table = self.table(z, v)
        return np.vstack([table.sum(axis=0), table[:-1]])


class QK(DomainModel):
    """Four K x K matrices Q(z,v) built from the first K-1 states and intervals."""

    matrices: FloatArray
    cuts: Optional[FloatArray] = None

    @field_validator("matrices")
    @classmethod
    def consistent(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3 or value.shape[0] != 4 or value.shape[1] != value.shape[2]:
            raise ValueError("expected four square matrices")
        if np.any(value[:, 0, 0] != 1.0):
            raise ValueError("entry (1,1) of every Q matrix must be 1")
        slack = 1e-9
        if np.any(value < -slack) or np.any(value > 1.0 + slack):
            raise ValueError("probability entries must lie in [0, 1]")
        interior = value[:, 1:, 1:]
        if np.any(interior.sum(axis=1) > value[:, 0, 1:] + slack):
            raise ValueError("interior columns exceed the interval marginals")
        if np.any(interior.sum(axis=2) > value[:, 1:, 0] + slack):
            raise ValueError("interior rows exceed the state marginals")
        return value

    @property
    def k(self) -> int:
        return int(self.matrices.shape[1])

    def q(self, z: int, v: int) -> np.ndarray:
        return self.matrices[CellIndex(z, v).position]


class MixtureDecomposition(DomainModel):
    """Identified mixture factors; ``l_t[z]``, ``l_y[v]`` are K x K, ``lam`` is (4, K)."""

    meta: MixtureSpecMeta
    l_t: FloatArray
    l_y: FloatArray
    lam: FloatArray
    cuts: FloatArray
    alpha_beta: Optional["HeteroCoefficients"] = None

    @model_validator(mode="after")
    def shapes(self) -> "MixtureDecomposition":
        k = self.meta.k
        if self.l_t.shape != (2, k, k) or self.l_y.shape != (2, k, k):
            raise ValueError("L_T and L_Y must be stacks of two K x K matrices")
        if self.lam.shape != (4, k):
            raise ValueError("lam must hold K mixing weights per cell")
        return self

    def lambda_matrix(self, z: int, v: int) -> np.ndarray:
        return np.diag(self.lam[CellIndex(z, v).position])

    def reconstruct(self, z: int, v: int) -> np.ndarray:
        return self.l_t[z] @ self.lambda_matrix(z, v) @ self.l_y[v].T

    def emission(self, z: int) -> np.ndarray:
        """Full K x K matrix Pr(S=s_i | S*=s_j, z) with the implied last row appended."""
        rows = self.l_t[z][1:]
        return np.vstack([rows, 1.0 - rows.sum(axis=0)])

    def with_alpha_beta(self, coefficients: "HeteroCoefficients") -> "MixtureDecomposition":
        return self.model_copy(update={"alpha_beta": coefficients})

    def to_document(self) -> Dict:
        doc = {
            "kind": "mixture_decomposition",
            "k_u": self.meta.k_u,
            "states": [self.meta.state_label(i) for i in range(self.meta.k)],
            "partition": self.cuts.tolist(),
            "cell_order": [c.label for c in CELLS],
            "L_T": {f"z{z}": self.l_t[z].tolist() for z in (0, 1)},
            "emission": {f"z{z}": self.emission(z).tolist() for z in (0, 1)},
            "L_Y": {f"v{v}": self.l_y[v].tolist() for v in (0, 1)},
            "Lambda": {c.label: self.lam[c.position].tolist() for c in CELLS},
        }
        if self.alpha_beta is not None:
            doc["alpha_beta"] = self.alpha_beta.model_dump(mode="json")
        return doc


class HeteroCoefficients(DomainModel):
    """alpha(u, v) and beta(u, v) indexed [u, v], with their ingredients."""

    alpha: FloatArray
    beta: FloatArray
    pr_treated_by_z: FloatArray = Field(..., description="Pr(T*=1|U*=u, z, v) indexed [u, z, v]")
    outcome_means: FloatArray = Field(..., description="E[Y|S*=s, V=v] indexed [v, s]")


class MixtureDiagnostics(DomainModel):
    eigenvalues: Tuple[float, ...]
    eigenvalue_gap: float
    max_imaginary: float
    condition_numbers: Tuple[float, float, float, float]
    dominance_margin: float = Field(..., description="min_j A[j,j] - max_{i!=j} A[i,j] over z")
    assignment: Tuple[int, ...]


class OutcomeDistribution(DomainModel):
    """Pr(Y in interval j | S*=s, V=v) indexed [v, s, j]."""

    probabilities: FloatArray
    by_z: FloatArray = Field(..., description="Per-instrument reconstructions indexed [z, v, s, j]")
    cuts: FloatArray
    cross_check: float = Field(..., description="Largest |Z=0 - Z=1| disagreement")


MixtureDecomposition.model_rebuild()
