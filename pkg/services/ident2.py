"""Closed-form identification for the binary misclassified regressor.

Each Q(z,v) factors as L_T(z) Lambda(z,v) L_Y(v)^T. Products of the four Q
matrices share eigenvectors with one factor and carry cross ratios of the
mixing probabilities as eigenvalues; the eigenvectors are normalized to a
unit first entry and labeled by the ordering of the misclassification rates.
"""

import math
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.identification import DecompositionSet, Diagnostics, QMatrixSet, Tolerances
from models.moments import CELLS, CellIndex, MomentVector
from utils.exceptions import (
    ComplexEigenvaluesError,
    DegenerateEigenvectorError,
    EigenvaluesNotDistinctError,
    IdentificationError,
    InvalidProbabilityError,
    LabelingAmbiguousError,
    NonFiniteInputError,
    SingularIVMatrixError,
    SingularQError,
)
from utils.logging_config import get_logger, log_stage


logger = get_logger(__name__)

# Relative threshold below which an eigenvector's first entry cannot be scaled to 1.
FIRST_ENTRY_TOL = 1e-12


def build_q(m: MomentVector) -> QMatrixSet:
    """Assemble [[1, E[Y|z,v]], [E[T|z,v], E[YT|z,v]]] for the four cells."""
    table = m.as_matrix()
    matrices = np.empty((4, 2, 2))
    for cell in CELLS:
        ey, et, eyt = table[cell.position]
        matrices[cell.position] = [[1.0, ey], [et, eyt]]
    return QMatrixSet(matrices=matrices)


# =================================================================
# 2x2 EIGENPAIRS AND LABELING
# =================================================================
def eig2x2(
    matrix: np.ndarray,
    disc_tol: float = 0.0,
    min_gap: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenpairs of a real 2x2 matrix by the quadratic formula.

    Args:
        matrix: Real 2x2 matrix
        disc_tol: Negative discriminants down to -disc_tol are treated as zero
        min_gap: When set, eigenvalues closer than this raise

    Returns:
        Ascending eigenvalues and a matrix whose columns are the matching
        eigenvectors, each scaled to first entry 1

    Raises:
        ComplexEigenvaluesError: If the discriminant is below -disc_tol
        EigenvaluesNotDistinctError: If the gap is below ``min_gap``
        DegenerateEigenvectorError: If an eigenvector has a vanishing first entry
    """
    (a, b), (c, d) = np.asarray(matrix, dtype=float)
    disc = (a - d) ** 2 + 4.0 * b * c
    if disc < -disc_tol:
        raise ComplexEigenvaluesError(
            f"Discriminant {disc:.3e} is negative",
            details={"discriminant": disc, "tolerance": disc_tol},
        )
    root = math.sqrt(max(disc, 0.0))
    trace = a + d
    values = np.array([(trace - root) / 2.0, (trace + root) / 2.0])

    if min_gap is not None and values[1] - values[0] < min_gap:
        raise EigenvaluesNotDistinctError(
            f"Eigenvalues {values[0]:.6g} and {values[1]:.6g} are not distinct",
            details={"eigenvalues": values.tolist(), "gap": float(values[1] - values[0])},
        )

    vectors = np.empty((2, 2))
    for i, lam in enumerate(values):
        first = np.array([b, lam - a])
        second = np.array([lam - d, c])
        vec = first if np.linalg.norm(first) >= np.linalg.norm(second) else second
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Scalar multiple of the identity: every vector is an eigenvector.
            vec = np.eye(2)[i]
            norm = 1.0
        if abs(vec[0]) <= FIRST_ENTRY_TOL * norm:
            raise DegenerateEigenvectorError(
                f"Eigenvector for eigenvalue {lam:.6g} has a vanishing first entry",
                details={"eigenvalue": float(lam), "vector": (vec / norm).tolist()},
            )
        vectors[:, i] = vec / vec[0]
    return values, vectors


def label_columns(
    values: np.ndarray,
    vectors: np.ndarray,
    label_tol: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Order eigenpairs so the second-row entries ascend (T*=0 first).

    Raises:
        LabelingAmbiguousError: If the second-row entries differ by less than ``label_tol``
    """
    order = np.argsort(vectors[1], kind="stable")
    values = np.asarray(values)[order]
    vectors = vectors[:, order]
    margin = float(vectors[1, 1] - vectors[1, 0])
    if margin < label_tol:
        raise LabelingAmbiguousError(
            "Second-row entries of the emission matrix cannot be ordered",
            details={"entries": vectors[1].tolist(), "margin": margin},
        )
    return values, vectors


def _match_to(values: np.ndarray, vectors: np.ndarray, targets: Sequence[float]) -> np.ndarray:
    """Reorder eigenvector columns so that their eigenvalues line up with ``targets``."""
    straight = abs(values[0] - targets[0]) + abs(values[1] - targets[1])
    swapped = abs(values[1] - targets[0]) + abs(values[0] - targets[1])
    return vectors if straight <= swapped else vectors[:, ::-1]


# =================================================================
# SHARED STEPS
# =================================================================
def _check_conditioning(q: QMatrixSet, tol: Tolerances) -> Tuple[float, float, float, float]:
    if not np.isfinite(q.matrices).all():
        raise NonFiniteInputError("Moment matrices contain non-finite entries")
    conds = []
    for cell in CELLS:
        cond = float(np.linalg.cond(q.q(*cell)))
        if not (math.isfinite(cond) and cond < tol.max_cond):
            raise SingularQError(
                f"Q({cell.z},{cell.v}) is singular or badly conditioned",
                details={"cell": cell.label, "condition_number": cond, "max_cond": tol.max_cond},
            )
        conds.append(cond)
    return tuple(conds)


def _inverses(q: QMatrixSet) -> List[np.ndarray]:
    return [np.linalg.inv(q.matrices[c.position]) for c in CELLS]


def _probability(value: float, name: str, tol: Tolerances, clamped: List[str]) -> float:
    """Clamp a recovered probability inside [-tol.prob, 1 + tol.prob] to [0, 1]."""
    if 0.0 <= value <= 1.0:
        return value
    if -tol.prob <= value <= 1.0 + tol.prob:
        clamped.append(name)
        return min(max(value, 0.0), 1.0)
    raise InvalidProbabilityError(
        f"Recovered probability {name} = {value:.6g} lies outside [0, 1]",
        details={"entry": name, "value": value, "tolerance": tol.prob},
    )


def _clean_emission(l_t: np.ndarray, tol: Tolerances, clamped: List[str], z: int) -> np.ndarray:
    out = l_t.copy()
    for t in (0, 1):
        out[1, t] = _probability(float(l_t[1, t]), f"L_T(z={z})[T*={t}]", tol, clamped)
    return out


def _lambda_pair(l_t: np.ndarray, q: np.ndarray, l_y: np.ndarray) -> np.ndarray:
    return np.diag(np.linalg.inv(l_t) @ q @ np.linalg.inv(l_y.T))


def _clean_lambda(pair: np.ndarray, cell: CellIndex, tol: Tolerances, clamped: List[str]) -> np.ndarray:
    return np.array([
        _probability(float(pair[t]), f"Lambda({cell.label})[T*={t}]", tol, clamped)
        for t in (0, 1)
    ])


def solve_alpha_beta(
    ey_by_z: Sequence[float],
    pr_by_z: Sequence[float],
    relevance_tol: float,
) -> Tuple[float, float]:
    """
    Solve [[1, p(0)], [1, p(1)]] (alpha, beta) = (E[Y|Z=0], E[Y|Z=1]).

    Raises:
        SingularIVMatrixError: If |p(1) - p(0)| is below ``relevance_tol``
    """
    p0, p1 = pr_by_z
    det = p1 - p0
    if abs(det) < relevance_tol or det == 0.0:
        raise SingularIVMatrixError(
            "Instrument does not shift Pr(T*=1)",
            details={"pr_by_z": [p0, p1], "tolerance": relevance_tol},
        )
    beta = (ey_by_z[1] - ey_by_z[0]) / det
    alpha = ey_by_z[0] - beta * p0
    return alpha, beta


def _alpha_beta(q: QMatrixSet, lam: np.ndarray, tol: Tolerances) -> Tuple[np.ndarray, np.ndarray]:
    alpha = np.empty(2)
    beta = np.empty(2)
    for v in (0, 1):
        ey = [q.q(z, v)[0, 1] for z in (0, 1)]
        pr = [lam[CellIndex(z, v).position, 1] for z in (0, 1)]
        alpha[v], beta[v] = solve_alpha_beta(ey, pr, tol.relevance)
    return alpha, beta


def _relevance_gaps(lam: np.ndarray) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    p = lam[:, 1]
    by_z = tuple(float(abs(p[CellIndex(1, v).position] - p[CellIndex(0, v).position])) for v in (0, 1))
    by_v = tuple(float(abs(p[CellIndex(z, 1).position] - p[CellIndex(z, 0).position])) for z in (0, 1))
    return by_z, by_v


def _log_clamped(route: str, clamped: List[str]) -> None:
    if clamped:
        logger.warning("Recovered probabilities clamped to [0, 1]", route=route, entries=clamped)


# =================================================================
# IDENTIFICATION ROUTES
# =================================================================
def identify_prop1(q: QMatrixSet, tol: Optional[Tolerances] = None) -> Tuple[DecompositionSet, Diagnostics]:
    """
    Identify all factors when misclassification may depend on Z.

    L_T(0) diagonalizes Q(0,0) Q(1,0)^-1 Q(1,1) Q(0,1)^-1, L_T(1) the cyclic
    product starting at Q(1,0), and L_Y(0), L_Y(1) the matching products of
    transposes. Columns are labeled on L_T(0) and carried to the other
    factors through the shared cross-ratio eigenvalues.

    Args:
        q: Moment matrices in canonical cell order
        tol: Numerical thresholds (identification regime by default)

    Returns:
        Tuple of (decomposition, diagnostics)
    """
    tol = tol or Tolerances.identification()
    start = time.time()
    try:
        conds = _check_conditioning(q, tol)
        q00, q10, q01, q11 = (q.matrices[c.position] for c in CELLS)
        i00, i10, i01, i11 = _inverses(q)

        q_tilde = q00 @ i10 @ q11 @ i01
        values, vectors = eig2x2(q_tilde, tol.disc, tol.eig_gap)
        ratios, l_t0 = label_columns(values, vectors, tol.label)

        inverse_ratios = 1.0 / ratios
        values, vectors = eig2x2(q10 @ i00 @ q01 @ i11, tol.disc)
        l_t1 = _match_to(values, vectors, inverse_ratios)
        if l_t1[1, 1] - l_t1[1, 0] < tol.label:
            raise LabelingAmbiguousError(
                "Emission rates at Z=1 violate the ordering implied by Z=0",
                details={"entries": l_t1[1].tolist()},
            )

        values, vectors = eig2x2(q00.T @ i01.T @ q11.T @ i10.T, tol.disc)
        l_y0 = _match_to(values, vectors, ratios)
        values, vectors = eig2x2(q11.T @ i10.T @ q00.T @ i01.T, tol.disc)
        l_y1 = _match_to(values, vectors, ratios)

        clamped: List[str] = []
        l_t = np.stack([_clean_emission(l_t0, tol, clamped, 0), _clean_emission(l_t1, tol, clamped, 1)])
        l_y = np.stack([l_y0, l_y1])
        lam = np.empty((4, 2))
        for cell in CELLS:
            pair = _lambda_pair(l_t[cell.z], q.q(*cell), l_y[cell.v])
            lam[cell.position] = _clean_lambda(pair, cell, tol, clamped)
        alpha, beta = _alpha_beta(q, lam, tol)

    except IdentificationError:
        raise
    except np.linalg.LinAlgError as e:
        raise SingularQError(f"Linear algebra failure during identification: {e}")

    _log_clamped("prop1", clamped)
    by_z, by_v = _relevance_gaps(lam)
    diagnostics = Diagnostics(
        eigenvalue_gap=float(abs(ratios[1] - ratios[0])),
        cross_ratios=(float(ratios[0]), float(ratios[1])),
        condition_numbers=conds,
        labeling_margin=float(min(l_t[z][1, 1] - l_t[z][1, 0] for z in (0, 1))),
        relevance_gaps_z=by_z,
        relevance_gaps_v=by_v,
        clamped=tuple(clamped),
    )
    decomposition = DecompositionSet(l_t=l_t, l_y=l_y, lam=lam, alpha=alpha, beta=beta, route="prop1")
    log_stage("identification", "prop1", time.time() - start, True,
              eigenvalue_gap=diagnostics.eigenvalue_gap)
    return decomposition, diagnostics


def identify_prop2(q: QMatrixSet, tol: Optional[Tolerances] = None) -> Tuple[DecompositionSet, Diagnostics]:
    """
    Identify all factors when misclassification does not depend on Z.

    L_T diagonalizes Q(0,0) Q(1,0)^-1 with eigenvalues Pr(T*=t|0,0)/Pr(T*=t|1,0).
    L_Y(v) diagonalizes Q(0,v)^T (Q(1,v)^T)^-1 and is recovered per v, so the
    route also covers worlds where Pr(T*|Z,V) moves with V; the largest
    change of Lambda(z,v) across v is reported.
    """
    tol = tol or Tolerances.identification()
    start = time.time()
    try:
        conds = _check_conditioning(q, tol)
        q00, q10, q01, q11 = (q.matrices[c.position] for c in CELLS)
        i00, i10, i01, i11 = _inverses(q)

        values, vectors = eig2x2(q00 @ i10, tol.disc, tol.eig_gap)
        ratios_v0, l_t_raw = label_columns(values, vectors, tol.label)

        # Cross ratios at v=1, labeled through the already ordered L_T.
        ratios_v1 = np.diag(np.linalg.inv(l_t_raw) @ q01 @ i11 @ l_t_raw)
        gap_v1 = float(abs(ratios_v1[1] - ratios_v1[0]))
        if gap_v1 < tol.eig_gap:
            raise EigenvaluesNotDistinctError(
                "Cross ratios at V=1 are not distinct",
                details={"eigenvalues": ratios_v1.tolist(), "gap": gap_v1},
            )

        values, vectors = eig2x2(q00.T @ i10.T, tol.disc)
        l_y0 = _match_to(values, vectors, ratios_v0)
        values, vectors = eig2x2(q01.T @ i11.T, tol.disc)
        l_y1 = _match_to(values, vectors, ratios_v1)

        clamped: List[str] = []
        l_t_single = _clean_emission(l_t_raw, tol, clamped, 0)
        l_t = np.stack([l_t_single, l_t_single])
        l_y = np.stack([l_y0, l_y1])
        lam = np.empty((4, 2))
        for cell in CELLS:
            pair = _lambda_pair(l_t_single, q.q(*cell), l_y[cell.v])
            lam[cell.position] = _clean_lambda(pair, cell, tol, clamped)
        alpha, beta = _alpha_beta(q, lam, tol)

    except IdentificationError:
        raise
    except np.linalg.LinAlgError as e:
        raise SingularQError(f"Linear algebra failure during identification: {e}")

    _log_clamped("prop2", clamped)
    by_z, by_v = _relevance_gaps(lam)
    discrepancy = max(
        float(np.abs(lam[CellIndex(z, 1).position] - lam[CellIndex(z, 0).position]).max())
        for z in (0, 1)
    )
    diagnostics = Diagnostics(
        eigenvalue_gap=float(min(abs(ratios_v0[1] - ratios_v0[0]), gap_v1)),
        cross_ratios=(float(ratios_v0[0]), float(ratios_v0[1])),
        condition_numbers=conds,
        labeling_margin=float(l_t_single[1, 1] - l_t_single[1, 0]),
        relevance_gaps_z=by_z,
        relevance_gaps_v=by_v,
        clamped=tuple(clamped),
        lambda_v_discrepancy=discrepancy,
    )
    decomposition = DecompositionSet(l_t=l_t, l_y=l_y, lam=lam, alpha=alpha, beta=beta, route="prop2")
    log_stage("identification", "prop2", time.time() - start, True,
              eigenvalue_gap=diagnostics.eigenvalue_gap, lambda_v_discrepancy=discrepancy)
    return decomposition, diagnostics


def identify(q: QMatrixSet, route: str = "prop1", tol: Optional[Tolerances] = None) -> Tuple[DecompositionSet, Diagnostics]:
    """Dispatch to the closed-form route named by ``route``."""
    if route == "prop1":
        return identify_prop1(q, tol)
    if route == "prop2":
        return identify_prop2(q, tol)
    raise ValueError(f"Unknown binary identification route: {route}")
