"""Synthetic-world documents and the assumption report."""

import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.moments import CellIndex
from utils.exceptions import SpecValidationError

DGP_SCHEMA_VERSION = 1


def _open_unit(name: str, values) -> None:
    flat = np.asarray(values, dtype=float).ravel()
    if not ((flat > 0.0) & (flat < 1.0)).all():
        raise SpecValidationError(
            f"{name} must lie strictly inside (0, 1)",
            details={"field": name, "values": flat.tolist()},
        )


def _shape(name: str, values, shape: Tuple[int, ...]) -> None:
    actual = np.asarray(values, dtype=float).shape
    if actual != shape:
        raise SpecValidationError(
            f"{name} must have shape {shape}, got {actual}",
            details={"field": name},
        )


class _SpecBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: int = Field(default=DGP_SCHEMA_VERSION)
    name: str = Field(default="unnamed", description="Fixture name")
    pr_z_given_v: List[float] = Field(..., description="Pr(Z=1|V=v) for v=0,1")
    pr_v: float = Field(..., description="Pr(V=1)")

    def _check_common(self) -> None:
        if self.schema_version != DGP_SCHEMA_VERSION:
            raise SpecValidationError(
                f"Unsupported DGP schema version {self.schema_version}",
                details={"expected": DGP_SCHEMA_VERSION},
            )
        _shape("pr_z_given_v", self.pr_z_given_v, (2,))
        _open_unit("pr_z_given_v", self.pr_z_given_v)
        _open_unit("pr_v", [self.pr_v])

    def pr_cell(self, z: int, v: int) -> float:
        """Pr(Z=z, V=v)."""
        pv = self.pr_v if v == 1 else 1.0 - self.pr_v
        pz = self.pr_z_given_v[v] if z == 1 else 1.0 - self.pr_z_given_v[v]
        return pv * pz


class DgpSpec2(_SpecBase):
    """Binary world: Y = alpha(v) + x_slope * X + beta(v) T* + eps.

    ``misclassification[z][t]`` is Pr(T=1|T*=t, Z=z); ``offsets[v][t]`` is
    E[eps|T*=t, V=v] (zero when absent); X ~ Uniform(0, 1) exists only when
    ``x_slope`` is set.
    """

    kind: Literal["dgp_spec2"] = "dgp_spec2"
    pr_tstar: List[float] = Field(..., description="Pr(T*=1|z,v) in canonical cell order")
    misclassification: List[List[float]]
    alpha: List[float]
    beta: List[float]
    noise_sd: float = Field(default=1.0, ge=0.0)
    offsets: Optional[List[List[float]]] = None
    x_slope: Optional[float] = None

    @model_validator(mode="after")
    def invariants(self) -> "DgpSpec2":
        self._check_common()
        _shape("pr_tstar", self.pr_tstar, (4,))
        _shape("misclassification", self.misclassification, (2, 2))
        _shape("alpha", self.alpha, (2,))
        _shape("beta", self.beta, (2,))
        _open_unit("pr_tstar", self.pr_tstar)
        _open_unit("misclassification", self.misclassification)
        for z in (0, 1):
            low, high = self.misclassification[z]
            if not low < high:
                raise SpecValidationError(
                    "Misclassification must satisfy Pr(T=1|T*=0,z) < Pr(T=1|T*=1,z)",
                    details={"z": z, "rates": [low, high]},
                )
        if self.offsets is not None:
            _shape("offsets", self.offsets, (2, 2))
        for v in (0, 1):
            if math.isclose(self.beta[v], self.offset(0, v) - self.offset(1, v), abs_tol=1e-12):
                raise SpecValidationError(
                    "beta(v) must differ from E[eps|T*=0,v] - E[eps|T*=1,v]",
                    details={"v": v, "beta": self.beta[v]},
                )
        return self

    def p_tstar(self, z: int, v: int) -> float:
        return self.pr_tstar[CellIndex(z, v).position]

    def offset(self, t: int, v: int) -> float:
        return 0.0 if self.offsets is None else self.offsets[v][t]

    @property
    def has_x(self) -> bool:
        return self.x_slope is not None

    def intercept(self, v: int, x: Optional[float] = None) -> float:
        """alpha(x, v); marginal over X ~ U(0, 1) when ``x`` is None."""
        if self.x_slope is None:
            return self.alpha[v]
        return self.alpha[v] + self.x_slope * (0.5 if x is None else x)


class DgpSpecK(_SpecBase):
    """Mixture world over S* = (U*, T*) with K = 2 K_u states (U* major, T* minor).

    ``mixing[c][s]`` is Pr(S*=s|cell c) in canonical cell order,
    ``emission[z][i][j]`` is Pr(S=s_i|S*=s_j, Z=z) and ``alpha[u][v]``,
    ``beta[u][v]`` are the outcome coefficients. Dominance and eigenvalue
    distinctness are reported by ``verify_assumptions`` rather than enforced,
    so negative-control worlds remain representable.
    """

    kind: Literal["dgp_spec_k"] = "dgp_spec_k"
    k_u: int = Field(..., ge=1)
    mixing: List[List[float]]
    emission: List[List[List[float]]]
    alpha: List[List[float]]
    beta: List[List[float]]
    noise_sd: float = Field(default=1.0, gt=0.0)
    partition: Optional[List[float]] = None

    @model_validator(mode="after")
    def invariants(self) -> "DgpSpecK":
        self._check_common()
        k = self.k
        _shape("mixing", self.mixing, (4, k))
        _shape("emission", self.emission, (2, k, k))
        _shape("alpha", self.alpha, (self.k_u, 2))
        _shape("beta", self.beta, (self.k_u, 2))
        mixing = np.asarray(self.mixing)
        if not (mixing > 0).all() or not np.allclose(mixing.sum(axis=1), 1.0, atol=1e-9):
            raise SpecValidationError(
                "Mixing weights must be positive and sum to one per cell",
                details={"row_sums": mixing.sum(axis=1).tolist()},
            )
        emission = np.asarray(self.emission)
        if (emission < 0).any() or not np.allclose(emission.sum(axis=1), 1.0, atol=1e-9):
            raise SpecValidationError(
                "Emission matrices must be column-stochastic",
                details={"column_sums": emission.sum(axis=1).tolist()},
            )
        if self.partition is not None:
            cuts = np.asarray(self.partition, dtype=float)
            if cuts.shape != (k - 1,) or not (np.diff(cuts) > 0).all():
                raise SpecValidationError(
                    "Partition must hold K-1 strictly increasing cut points",
                    details={"partition": self.partition},
                )
        return self

    @property
    def k(self) -> int:
        return 2 * self.k_u

    def mixing_array(self) -> np.ndarray:
        return np.asarray(self.mixing, dtype=float)

    def emission_array(self) -> np.ndarray:
        return np.asarray(self.emission, dtype=float)

    def pr_state_given_v(self) -> np.ndarray:
        """Pr(S*=s|V=v) indexed [v, s]."""
        mixing = self.mixing_array()
        out = np.zeros((2, self.k))
        for v in (0, 1):
            pz = self.pr_z_given_v[v]
            out[v] = (1.0 - pz) * mixing[CellIndex(0, v).position] + pz * mixing[CellIndex(1, v).position]
        return out

    def potential_outcome_means(self) -> Tuple[List[float], List[float]]:
        """(mu_0(v), mu_1(v)) for v=0,1: E[Y_0|V=v] and E[Y_1|V=v]."""
        by_state = self.pr_state_given_v()
        mu0, mu1 = [], []
        for v in (0, 1):
            pr_u = by_state[v].reshape(self.k_u, 2).sum(axis=1)
            a = np.asarray(self.alpha)[:, v]
            b = np.asarray(self.beta)[:, v]
            mu0.append(float(pr_u @ a))
            mu1.append(float(pr_u @ (a + b)))
        return mu0, mu1

    @classmethod
    def from_binary(cls, spec: DgpSpec2, cuts: List[float]) -> "DgpSpecK":
        """Embed a binary world as a one-type mixture (state order T*=0, T*=1)."""
        if spec.offsets is not None or spec.x_slope is not None:
            raise SpecValidationError(
                "Only mean-exogenous worlds without X embed as mixtures",
                details={"name": spec.name},
            )
        mixing = [[1.0 - p, p] for p in spec.pr_tstar]
        emission = [
            [[1.0 - spec.misclassification[z][0], 1.0 - spec.misclassification[z][1]],
             [spec.misclassification[z][0], spec.misclassification[z][1]]]
            for z in (0, 1)
        ]
        return cls(
            name=f"{spec.name}-embedded",
            k_u=1,
            mixing=mixing,
            emission=emission,
            alpha=[list(spec.alpha)],
            beta=[list(spec.beta)],
            noise_sd=spec.noise_sd,
            pr_z_given_v=list(spec.pr_z_given_v),
            pr_v=spec.pr_v,
            partition=list(cuts),
        )


class ClauseResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    margin: Optional[float] = Field(
        default=None,
        description="Signed slack of the clause; None for clauses that hold by construction",
    )
    statement: str
    detail: Optional[str] = None


class AssumptionReport(BaseModel):
    """Clause-by-clause evaluation of a synthetic world."""

    model_config = ConfigDict(frozen=True)

    spec_name: str
    spec_kind: str
    clauses: Dict[str, ClauseResult]
    alternatives: Dict[str, ClauseResult] = Field(
        default_factory=dict,
        description="Clauses of alternative assumption sets, not required to pass",
    )
    cross_ratios: List[float] = Field(default_factory=list)
    implied_eps_means: Optional[List[float]] = Field(
        default=None,
        description="E[eps|Z=z,V=v] in canonical cell order (binary worlds)",
    )
    regime: str = Field(..., description="Which exogeneity regime the world satisfies")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failures(self) -> List[str]:
        return [name for name, c in self.clauses.items() if not c.passed]
