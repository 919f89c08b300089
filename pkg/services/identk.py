"""Identification of the latent-type mixture model.

The observed state S = (U, T) is coded 2u + t, matching the latent
enumeration S* = (U*, T*) with U* major and T* minor. Q(z,v) is built from
the first K-1 states and outcome intervals of a K-cell partition.
"""

import time
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eig
from scipy.optimize import linear_sum_assignment

from config.settings import settings
from models.identification import Tolerances
from models.mixture import (
    HeteroCoefficients,
    MixtureDecomposition,
    MixtureDiagnostics,
    MixtureSpecMeta,
    OutcomeDistribution,
    Partition,
    PartitionMoments,
    QK,
)
from models.moments import CELLS, CellIndex
from models.observations import ObservationInput, ObservationTable, coerce
from utils.exceptions import (
    ComplexEigenvaluesError,
    CrossCheckFailedError,
    DegenerateEigenvectorError,
    EigenvaluesNotDistinctError,
    EmptyCellError,
    IdentificationError,
    InputSchemaError,
    InvalidProbabilityError,
    IrrelevantInstrumentAtUError,
    NoDominantLabelingError,
    NonFiniteInputError,
    PartitionMismatchError,
    SingularQError,
    TooFewDistinctValuesError,
)
from utils.logging_config import get_logger, log_stage


logger = get_logger(__name__)

FIRST_ENTRY_TOL = 1e-12


# =================================================================
# PARTITIONS AND JOINT TABLES
# =================================================================
def build_partition(y_sample: Sequence[float], k: int) -> Partition:
    """
    Cut points at the j/K empirical quantiles (linear interpolation), j = 1..K-1.

    Tied quantiles are moved up to the next representable float so the cuts
    stay strictly increasing.

    Raises:
        TooFewDistinctValuesError: If the sample has fewer than K distinct values
    """
    y = np.asarray(y_sample, dtype=float)
    distinct = int(np.unique(y[np.isfinite(y)]).size)
    if distinct < k:
        raise TooFewDistinctValuesError(
            f"Need {k} distinct outcome values, found {distinct}",
            details={"distinct": distinct, "k": k},
        )
    levels = np.arange(1, k) / k
    return Partition(cuts=_quantile_cuts(y, levels))


def _quantile_cuts(y: np.ndarray, levels: np.ndarray) -> np.ndarray:
    cuts = np.quantile(y, levels, method="linear")
    for j in range(1, cuts.size):
        if cuts[j] <= cuts[j - 1]:
            cuts[j] = np.nextafter(cuts[j - 1], np.inf)
    return cuts


def _state_codes(table: ObservationTable, meta: MixtureSpecMeta) -> np.ndarray:
    if table.u is None:
        raise InputSchemaError("Mixture identification needs the u column")
    if table.u.size and int(table.u.max()) >= meta.k_u:
        raise InputSchemaError(
            f"u codes must lie in 0..{meta.k_u - 1}",
            details={"max_u": int(table.u.max()), "k_u": meta.k_u},
        )
    return 2 * table.u.astype(np.int64) + table.t.astype(np.int64)


def partition_moments(
    data: ObservationInput,
    partition: Partition,
    meta: MixtureSpecMeta,
    kind: str = "probability",
    min_cell_size: Optional[int] = None,
) -> PartitionMoments:
    """
    Sample joint tables over (S, Y-interval) per (z, v) cell.

    With ``kind="outcome"`` each indicator is weighted by Y.

    Raises:
        EmptyCellError: If a cell has fewer than ``min_cell_size`` rows
        NonFiniteInputError: If any outcome is NaN or infinite
    """
    table = coerce(data)
    if not np.isfinite(table.y).all():
        raise NonFiniteInputError("Outcomes must be finite for partition moments")
    min_cell_size = min_cell_size or settings.min_cell_size
    states = _state_codes(table, meta)
    intervals = partition.assign(table.y)
    m = partition.k
    joint = np.zeros((4, meta.k, m))
    counts = []
    for cell in CELLS:
        mask = (table.z == cell.z) & (table.v == cell.v)
        n_c = int(mask.sum())
        if n_c < min_cell_size:
            raise EmptyCellError(
                f"Cell {cell.label} has {n_c} observations, need {min_cell_size}",
                details={"cell": cell.label, "count": n_c},
            )
        flat = states[mask] * m + intervals[mask]
        weights = table.y[mask] if kind == "outcome" else None
        tally = np.bincount(flat, weights=weights, minlength=meta.k * m)
        joint[cell.position] = tally.reshape(meta.k, m) / n_c
        counts.append(float(n_c))
    return PartitionMoments(joint=joint, cuts=partition.cuts, kind=kind, cell_counts=tuple(counts))


def build_qk(
    source: Union[PartitionMoments, ObservationInput],
    partition: Partition,
    meta: MixtureSpecMeta,
) -> QK:
    """
    Assemble the four K x K matrices over the first K-1 states and intervals.

    Row and column 0 hold the interval and state marginals; entry (0, 0) is 1.

    Raises:
        PartitionMismatchError: If the partition does not have K cells, does not
            match the tables, or leaves an interval without mass in some cell
        EmptyCellError: If a cell of the data is too small
    """
    if partition.k != meta.k:
        raise PartitionMismatchError(
            f"Partition has {partition.k} intervals, the mixture has {meta.k} states",
            details={"intervals": partition.k, "states": meta.k},
        )
    if isinstance(source, PartitionMoments):
        tables = source
        if tables.cuts.shape != partition.cuts.shape or not np.allclose(tables.cuts, partition.cuts):
            raise PartitionMismatchError("Joint tables were built on a different partition")
        if tables.kind != "probability":
            raise PartitionMismatchError("Q matrices need probability tables")
    else:
        tables = partition_moments(source, partition, meta)

    k = meta.k
    matrices = np.empty((4, k, k))
    for cell in CELLS:
        table = tables.table(*cell)
        mass = table.sum(axis=0)
        empty = np.flatnonzero(mass <= 0.0)
        if empty.size:
            raise PartitionMismatchError(
                f"Interval {int(empty[0])} has no mass in cell {cell.label}",
                details={"cell": cell.label, "intervals": empty.tolist()},
            )
        q = matrices[cell.position]
        q[0, 0] = 1.0
        q[0, 1:] = mass[:k - 1]
        q[1:, 0] = table.sum(axis=1)[:k - 1]
        q[1:, 1:] = table[:k - 1, :k - 1]
    return QK(matrices=matrices, cuts=partition.cuts)


# =================================================================
# EIGEN-DECOMPOSITION AND LABELING
# =================================================================
def _real_eig(matrix: np.ndarray, tol: Tolerances, min_gap: bool = False) -> Tuple[np.ndarray, np.ndarray, float]:
    """Real eigenpairs with vectors scaled to first entry 1, plus the largest imaginary part."""
    values, vectors = eig(matrix)
    imag = float(max(np.abs(values.imag).max(), 0.0))
    if imag > tol.imag:
        raise ComplexEigenvaluesError(
            "Cross-ratio matrix has complex eigenvalues",
            details={"max_imaginary": imag, "tolerance": tol.imag},
        )
    values = values.real
    vectors = vectors.real
    if min_gap:
        gap = _min_gap(values)
        if gap < tol.eig_gap:
            raise EigenvaluesNotDistinctError(
                f"Cross-ratio eigenvalues are within {gap:.3e} of each other",
                details={"eigenvalues": np.sort(values).tolist(), "gap": gap},
            )
    norms = np.linalg.norm(vectors, axis=0)
    first = vectors[0]
    bad = np.flatnonzero(np.abs(first) <= FIRST_ENTRY_TOL * norms)
    if bad.size:
        raise DegenerateEigenvectorError(
            "An eigenvector has a vanishing first entry",
            details={"eigenvalue": float(values[bad[0]])},
        )
    return values, vectors / first, imag


def _min_gap(values: np.ndarray) -> float:
    ordered = np.sort(values)
    return float(np.diff(ordered).min()) if ordered.size > 1 else float("inf")


def _full_emission(l_t: np.ndarray) -> np.ndarray:
    rows = l_t[1:]
    return np.vstack([rows, 1.0 - rows.sum(axis=0)])


def dominance_margin(emission: np.ndarray) -> float:
    """min_j A[j,j] - max_{i != j} A[i,j]."""
    k = emission.shape[0]
    off = np.where(np.eye(k, dtype=bool), -np.inf, emission)
    return float((np.diag(emission) - off.max(axis=0)).min())


def label_by_dominance(vectors: np.ndarray, label_tol: float = 0.0) -> Tuple[np.ndarray, float]:
    """
    Column order that makes the implied emission matrix diagonally dominant.

    Solves the assignment maximizing the trace of the completed emission
    matrix, then verifies strict dominance.

    Returns:
        Tuple of (column order, dominance margin)

    Raises:
        NoDominantLabelingError: If the best assignment is not strictly dominant
    """
    emission = _full_emission(vectors)
    _, order = linear_sum_assignment(emission, maximize=True)
    margin = dominance_margin(emission[:, order])
    if not margin > label_tol:
        raise NoDominantLabelingError(
            "No state labeling makes the emission matrix diagonally dominant",
            details={"assignment": order.tolist(), "margin": margin},
        )
    return order, margin


def _match_to(values: np.ndarray, vectors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Columns of ``vectors`` reordered so their eigenvalues pair with ``targets``."""
    cost = np.abs(targets[:, None] - values[None, :])
    _, order = linear_sum_assignment(cost)
    error = float(cost[np.arange(targets.size), order].max())
    if targets.size > 1 and error >= 0.5 * _min_gap(targets):
        raise EigenvaluesNotDistinctError(
            "Eigenvalues of the companion products cannot be paired",
            details={"targets": targets.tolist(), "values": values.tolist()},
        )
    return vectors[:, order]


def _check_conditioning(qk: QK, tol: Tolerances) -> Tuple[float, float, float, float]:
    if not np.isfinite(qk.matrices).all():
        raise NonFiniteInputError("Mixture moment matrices contain non-finite entries")
    conds = []
    for cell in CELLS:
        cond = float(np.linalg.cond(qk.q(*cell)))
        if not (np.isfinite(cond) and cond < tol.max_cond):
            raise SingularQError(
                f"Q({cell.z},{cell.v}) is singular or badly conditioned",
                details={"cell": cell.label, "condition_number": cond, "max_cond": tol.max_cond},
            )
        conds.append(cond)
    return tuple(conds)


def _clean_mixing(diagonal: np.ndarray, cell: CellIndex, tol: Tolerances, clamped: List[str]) -> np.ndarray:
    out = diagonal.copy()
    for s, value in enumerate(diagonal):
        if 0.0 <= value <= 1.0:
            continue
        if -tol.prob <= value <= 1.0 + tol.prob:
            clamped.append(f"Lambda({cell.label})[s{s}]")
            out[s] = min(max(value, 0.0), 1.0)
        else:
            raise InvalidProbabilityError(
                f"Recovered mixing weight {value:.6g} lies outside [0, 1]",
                details={"cell": cell.label, "state": s, "value": float(value)},
            )
    return out


def identify_mixture(
    qk: QK,
    meta: MixtureSpecMeta,
    tol: Optional[Tolerances] = None,
) -> Tuple[MixtureDecomposition, MixtureDiagnostics]:
    """
    Recover L_T(z), L_Y(v) and the mixing weights from the four K x K matrices.

    L_T(0) comes from Q(0,0) Q(1,0)^-1 Q(1,1) Q(0,1)^-1 and is labeled by
    diagonal dominance; L_T(1), L_Y(0) and L_Y(1) diagonalize the companion
    products and inherit the labels through their eigenvalues.
    """
    tol = tol or Tolerances.identification()
    if qk.k != meta.k:
        raise PartitionMismatchError(
            f"Q matrices are {qk.k} x {qk.k}, the mixture has {meta.k} states",
            details={"size": qk.k, "states": meta.k},
        )
    start = time.time()
    try:
        conds = _check_conditioning(qk, tol)
        q00, q10, q01, q11 = (qk.matrices[c.position] for c in CELLS)
        i00, i10, i01, i11 = (np.linalg.inv(m) for m in (q00, q10, q01, q11))

        values, vectors, imag = _real_eig(q00 @ i10 @ q11 @ i01, tol, min_gap=True)
        order, margin0 = label_by_dominance(vectors, tol.label)
        ratios = values[order]
        l_t0 = vectors[:, order]

        values, vectors, imag1 = _real_eig(q10 @ i00 @ q01 @ i11, tol)
        l_t1 = _match_to(values, vectors, 1.0 / ratios)
        margin1 = dominance_margin(_full_emission(l_t1))
        if not margin1 > tol.label:
            raise NoDominantLabelingError(
                "Emission matrix at Z=1 is not diagonally dominant under the Z=0 labels",
                details={"assignment": order.tolist(), "margin": margin1},
            )

        values, vectors, imag2 = _real_eig(q00.T @ i01.T @ q11.T @ i10.T, tol)
        l_y0 = _match_to(values, vectors, ratios)
        values, vectors, imag3 = _real_eig(q11.T @ i10.T @ q00.T @ i01.T, tol)
        l_y1 = _match_to(values, vectors, ratios)

        l_t = np.stack([l_t0, l_t1])
        l_y = np.stack([l_y0, l_y1])
        clamped: List[str] = []
        lam = np.empty((4, meta.k))
        for cell in CELLS:
            inner = np.linalg.inv(l_t[cell.z]) @ qk.q(*cell) @ np.linalg.inv(l_y[cell.v].T)
            lam[cell.position] = _clean_mixing(np.diag(inner), cell, tol, clamped)

    except IdentificationError:
        raise
    except np.linalg.LinAlgError as e:
        raise SingularQError(f"Linear algebra failure during mixture identification: {e}")

    if clamped:
        logger.warning("Recovered mixing weights clamped to [0, 1]", entries=clamped)

    cuts = qk.cuts if qk.cuts is not None else np.zeros(0)
    decomposition = MixtureDecomposition(meta=meta, l_t=l_t, l_y=l_y, lam=lam, cuts=cuts)
    diagnostics = MixtureDiagnostics(
        eigenvalues=tuple(float(r) for r in ratios),
        eigenvalue_gap=_min_gap(ratios),
        max_imaginary=max(imag, imag1, imag2, imag3),
        condition_numbers=conds,
        dominance_margin=min(margin0, margin1),
        assignment=tuple(int(i) for i in order),
    )
    log_stage("identification", "mixture", time.time() - start, True,
              k=meta.k, eigenvalue_gap=diagnostics.eigenvalue_gap,
              dominance_margin=diagnostics.dominance_margin)
    return decomposition, diagnostics


# =================================================================
# OUTCOME DISTRIBUTIONS AND COEFFICIENTS
# =================================================================
def _state_tables(mix: MixtureDecomposition, tables: PartitionMoments) -> np.ndarray:
    """Lambda^-1 L_T^-1 applied to the stacked tables, indexed [z, v, s, j]."""
    if tables.k != mix.meta.k:
        raise PartitionMismatchError(
            f"Tables cover {tables.k} states, the mixture has {mix.meta.k}",
            details={"tables": tables.k, "states": mix.meta.k},
        )
    out = np.empty((2, 2, mix.meta.k, tables.m))
    try:
        for cell in CELLS:
            inverse = np.linalg.inv(mix.lambda_matrix(*cell)) @ np.linalg.inv(mix.l_t[cell.z])
            out[cell.z, cell.v] = inverse @ tables.stacked(*cell)
    except np.linalg.LinAlgError as e:
        raise SingularQError(f"Mixture factors are not invertible: {e}")
    return out


def conditional_outcome_dist(
    mix: MixtureDecomposition,
    q_delta: PartitionMoments,
    tol: Optional[Tolerances] = None,
) -> OutcomeDistribution:
    """
    Pr(Y in Delta_j | S*=s, V=v) for the intervals of an arbitrary partition.

    The Z=0 and Z=1 reconstructions are computed separately and must agree
    within ``tol.cross``; their average is returned.

    Raises:
        CrossCheckFailedError: If the two reconstructions disagree
    """
    tol = tol or Tolerances.identification()
    if q_delta.kind != "probability":
        raise PartitionMismatchError("Outcome distributions need probability tables")
    by_z = _state_tables(mix, q_delta)
    cross = float(np.abs(by_z[0] - by_z[1]).max())
    if cross > tol.cross:
        raise CrossCheckFailedError(
            f"Z=0 and Z=1 reconstructions differ by {cross:.3e}",
            details={"discrepancy": cross, "tolerance": tol.cross},
        )
    logger.info("Outcome distribution recovered", intervals=q_delta.m, cross_check=cross)
    return OutcomeDistribution(
        probabilities=0.5 * (by_z[0] + by_z[1]),
        by_z=by_z,
        cuts=q_delta.cuts,
        cross_check=cross,
    )


def identify_alpha_beta_hetero(
    mix: MixtureDecomposition,
    pr_z_given_v: Sequence[float],
    moments: PartitionMoments,
    tol: Optional[Tolerances] = None,
) -> HeteroCoefficients:
    """
    Recover alpha(u, v) and beta(u, v).

    E[Y|S*=s, z, v] comes from the mixture inversion of the Y-weighted
    indicator tables summed over intervals. For each (u, v),
    E[Y|U*=u, z, v] = alpha + beta Pr(T*=1|U*=u, z, v) at z = 0, 1 is solved.

    Args:
        mix: Identified mixture factors
        pr_z_given_v: Pr(Z=1|V=v), used to pool the per-z state means
        moments: Y-weighted joint tables (``kind="outcome"``)
        tol: Thresholds; ``tol.relevance`` bounds the 2x2 determinant

    Raises:
        IrrelevantInstrumentAtUError: If Z does not shift Pr(T*=1|U*=u, v)
    """
    tol = tol or Tolerances.identification()
    if moments.kind != "outcome":
        raise PartitionMismatchError("Coefficient recovery needs Y-weighted tables")
    state_means = _state_tables(mix, moments).sum(axis=3)  # [z, v, s]

    k_u = mix.meta.k_u
    alpha = np.empty((k_u, 2))
    beta = np.empty((k_u, 2))
    treated = np.empty((k_u, 2, 2))
    for v in (0, 1):
        for u in range(k_u):
            s0, s1 = 2 * u, 2 * u + 1
            ey = np.empty(2)
            for z in (0, 1):
                lam = mix.lam[CellIndex(z, v).position]
                treated[u, z, v] = lam[s1] / (lam[s0] + lam[s1])
                p = treated[u, z, v]
                ey[z] = (1.0 - p) * state_means[z, v, s0] + p * state_means[z, v, s1]
            det = treated[u, 1, v] - treated[u, 0, v]
            if abs(det) < tol.relevance or det == 0.0:
                raise IrrelevantInstrumentAtUError(
                    f"Instrument does not shift Pr(T*=1|U*={u}, V={v})",
                    details={"u": u, "v": v, "pr_by_z": treated[u, :, v].tolist()},
                )
            beta[u, v] = (ey[1] - ey[0]) / det
            alpha[u, v] = ey[0] - beta[u, v] * treated[u, 0, v]

    pooled = np.empty((2, mix.meta.k))
    for v in (0, 1):
        pz = np.array([1.0 - pr_z_given_v[v], pr_z_given_v[v]])
        weights = np.stack([pz[z] * mix.lam[CellIndex(z, v).position] for z in (0, 1)])
        pooled[v] = (weights * state_means[:, v, :]).sum(axis=0) / weights.sum(axis=0)

    logger.info("Heterogeneous coefficients recovered", k_u=k_u)
    return HeteroCoefficients(alpha=alpha, beta=beta, pr_treated_by_z=treated, outcome_means=pooled)


# =================================================================
# PIPELINE
# =================================================================
def _max_outcome_condition(table: ObservationTable, partition: Partition, meta: MixtureSpecMeta,
                           tol: Tolerances) -> float:
    mix, _ = identify_mixture(build_qk(table, partition, meta), meta, tol)
    return float(max(np.linalg.cond(mix.l_y[v]) for v in (0, 1)))


def select_partition(
    data: ObservationInput,
    meta: MixtureSpecMeta,
    tol: Optional[Tolerances] = None,
) -> Tuple[Partition, float]:
    """
    Quantile partition, replaced by the best shifted quantile partition when
    L_Y is badly conditioned.

    The grid shifts every quantile level by the same offset within half a
    quantile step and keeps the partition with the smallest condition number
    of L_Y. Partitions on which identification fails are skipped.

    Returns:
        Tuple of (partition, largest condition number of L_Y(v))
    """
    tol = tol or Tolerances.estimation()
    table = coerce(data)
    base = build_partition(table.y, meta.k)
    try:
        cond = _max_outcome_condition(table, base, meta, tol)
        if cond <= settings.partition_max_cond:
            return base, cond
        first_error: Optional[IdentificationError] = None
    except IdentificationError as e:
        cond = float("inf")
        first_error = e

    levels = np.arange(1, meta.k) / meta.k
    half_step = 0.5 / meta.k
    best, best_cond = base, cond
    for offset in np.linspace(-half_step, half_step, settings.partition_grid_points + 2)[1:-1]:
        candidate = Partition(cuts=_quantile_cuts(table.y, levels + offset))
        try:
            candidate_cond = _max_outcome_condition(table, candidate, meta, tol)
        except IdentificationError:
            continue
        if candidate_cond < best_cond:
            best, best_cond = candidate, candidate_cond

    if not np.isfinite(best_cond):
        raise first_error
    logger.info("Partition selected by grid search", condition_number=best_cond, cuts=best.cuts.tolist())
    return best, best_cond


def empirical_pr_z_given_v(table: ObservationTable) -> List[float]:
    """Sample frequency of Z=1 within each V cell."""
    out = []
    for v in (0, 1):
        mask = table.v == v
        if not mask.any():
            raise EmptyCellError(f"No observations with V={v}", details={"v": v})
        out.append(float(table.z[mask].mean()))
    return out


def fit_mixture(
    data: ObservationInput,
    meta: MixtureSpecMeta,
    partition: Optional[Partition] = None,
    tol: Optional[Tolerances] = None,
) -> Tuple[MixtureDecomposition, MixtureDiagnostics]:
    """Partition, identify and recover coefficients from an observation sample."""
    tol = tol or Tolerances.estimation()
    table = coerce(data)
    if partition is None:
        partition, _ = select_partition(table, meta, tol)
    mix, diagnostics = identify_mixture(build_qk(table, partition, meta), meta, tol)
    outcome_tables = partition_moments(table, partition, meta, kind="outcome")
    coefficients = identify_alpha_beta_hetero(mix, empirical_pr_z_given_v(table), outcome_tables, tol)
    return mix.with_alpha_beta(coefficients), diagnostics
