"""Sample conditional moments of R = (Y, T, YT) per (z, v) cell and their covariance."""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from models.moments import CELLS, KernelConfig, MomentCovariance, MomentVector
from models.observations import ObservationInput, ObservationTable, coerce
from utils.exceptions import (
    BadBandwidthError,
    DegenerateXError,
    EmptyCellError,
    InputSchemaError,
    NonFiniteInputError,
    ZeroKernelMassError,
)
from utils.logging_config import get_logger


logger = get_logger(__name__)


def _check_finite(table: ObservationTable) -> None:
    bad = ~np.isfinite(table.y)
    if bad.any():
        raise NonFiniteInputError(
            f"{int(bad.sum())} outcomes are not finite",
            details={"first_row": int(np.argmax(bad))},
        )


def _columns(table: ObservationTable, mask: np.ndarray) -> List[np.ndarray]:
    y = np.ascontiguousarray(table.y[mask])
    t = np.ascontiguousarray(table.t[mask], dtype=float)
    return [y, t, y * t]


def _is_zero_block(block: np.ndarray) -> bool:
    return bool(np.all(np.abs(block) <= 1e-14 * max(1.0, float(np.abs(block).max(initial=0.0)))))


def estimate_moments_discrete(
    data: ObservationInput,
    x: Optional[Union[float, Sequence[float]]] = None,
    min_cell_size: Optional[int] = None,
) -> Tuple[MomentVector, MomentCovariance]:
    """
    Estimate cell means of (Y, T, YT) among observations with X equal to ``x``.

    Args:
        data: Observations (table, frame or list of rows)
        x: Discrete covariate code; all rows are used when None
        min_cell_size: Minimum rows per (z, v) cell (defaults to settings)

    Returns:
        Moment vector at rate sqrt(n) and its block-diagonal covariance,
        block j = Var[R|x,w_j] * n / n_j

    Raises:
        NonFiniteInputError: If any outcome is NaN or infinite
        EmptyCellError: If a cell has fewer than ``min_cell_size`` rows
    """
    table = coerce(data)
    _check_finite(table)
    min_cell_size = min_cell_size or settings.min_cell_size

    keep = np.ones(table.n, dtype=bool)
    if x is not None:
        if table.x is None:
            raise InputSchemaError("Discrete x filtering needs covariate columns")
        code = np.atleast_1d(np.asarray(x, dtype=float))
        keep = np.all(table.x == code, axis=1)

    n = table.n
    means = np.zeros((4, 3))
    blocks = []
    counts = []
    degenerate = []
    for cell in CELLS:
        mask = keep & (table.z == cell.z) & (table.v == cell.v)
        n_j = int(mask.sum())
        if n_j < min_cell_size:
            raise EmptyCellError(
                f"Cell {cell.label} has {n_j} observations, need {min_cell_size}",
                details={"cell": cell.label, "count": n_j},
            )
        cols = _columns(table, mask)
        means[cell.position] = [np.sum(c) / n_j for c in cols]
        centered = np.column_stack([c - m for c, m in zip(cols, means[cell.position])])
        variance = centered.T @ centered / (n_j - 1)
        if _is_zero_block(variance):
            degenerate.append(cell.label)
            variance = np.zeros((3, 3))
        blocks.append(variance * n / n_j)
        counts.append(float(n_j))

    if degenerate:
        logger.warning("Degenerate variance in moment cells", cells=degenerate)

    logger.info(
        "Discrete moments estimated",
        n=n,
        cell_counts=counts,
        filtered=x is not None,
    )
    moments = MomentVector.from_cells(
        means,
        rate=math.sqrt(n),
        rate_label="sqrt(n)",
        cell_counts=tuple(counts),
        n=n,
        degenerate_cells=tuple(degenerate),
    )
    return moments, MomentCovariance.from_blocks(blocks)


def bandwidth_rule_of_thumb(data: Union[ObservationInput, np.ndarray], dim_x: Optional[int] = None) -> float:
    """
    Rule-of-thumb bandwidth h = 1.06 * sigma * n^(-1/(4+d)).

    sigma is the geometric mean of the coordinate standard deviations (ddof=1).

    Raises:
        DegenerateXError: If n < 2 or some coordinate is constant
    """
    if isinstance(data, np.ndarray):
        x = data.reshape(len(data), -1) if data.ndim == 1 else data
    else:
        table = coerce(data)
        if table.x is None:
            raise InputSchemaError("Bandwidth selection needs covariate columns")
        x = table.x
    n, d = x.shape
    dim_x = dim_x or d
    if n < 2:
        raise DegenerateXError("Bandwidth selection needs at least two observations", details={"n": n})
    sd = x.std(axis=0, ddof=1)
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise DegenerateXError(
            "A covariate coordinate is constant",
            details={"std": sd.tolist()},
        )
    sigma = float(np.exp(np.mean(np.log(sd))))
    return 1.06 * sigma * n ** (-1.0 / (4 + dim_x))


def estimate_moments_kernel(
    data: ObservationInput,
    x: Union[float, Sequence[float]],
    cfg: Optional[KernelConfig] = None,
) -> Tuple[MomentVector, MomentCovariance]:
    """
    Nadaraya-Watson estimates of the cell means of (Y, T, YT) at query ``x``.

    The covariance block of cell j is Var[R|x,w_j] * int K^2 / (f(x|w_j) Pr(W=w_j))
    with the kernel-weighted variance, f estimated by a kernel density with
    the same bandwidth and Pr(W=w_j) by its sample share. The rate is
    sqrt(n h^d).

    Raises:
        NonFiniteInputError: If any outcome is NaN or infinite
        BadBandwidthError: If the bandwidth is not positive
        DegenerateXError: If the rule of thumb is asked for with constant X
        ZeroKernelMassError: If a cell carries (numerically) no kernel weight
    """
    table = coerce(data)
    cfg = cfg or KernelConfig(family=settings.kernel)
    if table.x is None:
        raise InputSchemaError("Kernel moments need covariate columns")
    _check_finite(table)
    query = np.atleast_1d(np.asarray(x, dtype=float))
    d = table.dim_x
    if query.shape != (d,):
        raise InputSchemaError(
            f"Query point has {query.size} coordinates, data has {d}",
            details={"query": query.tolist()},
        )

    h = cfg.bandwidth if cfg.bandwidth is not None else bandwidth_rule_of_thumb(table, d)
    if not h > 0:
        raise BadBandwidthError(f"Bandwidth must be positive, got {h}", details={"bandwidth": h})

    weights = cfg.weights((table.x - query) / h)
    n = table.n
    scale = n * h ** d
    roughness = cfg.squared_integral(d)
    floor = settings.kernel_mass_floor

    means = np.zeros((4, 3))
    blocks = []
    counts = []
    degenerate = []
    for cell in CELLS:
        mask = (table.z == cell.z) & (table.v == cell.v)
        w = np.ascontiguousarray(weights[mask])
        total = float(np.sum(w))
        if not total >= floor:
            raise ZeroKernelMassError(
                f"Cell {cell.label} has total kernel weight {total:.3g}",
                details={"cell": cell.label, "weight": total, "floor": floor},
            )
        cols = _columns(table, mask)
        means[cell.position] = [np.sum(w * c) / total for c in cols]
        centered = np.column_stack([c - m for c, m in zip(cols, means[cell.position])])
        variance = (centered * w[:, None]).T @ centered / total
        if _is_zero_block(variance):
            degenerate.append(cell.label)
            variance = np.zeros((3, 3))
        blocks.append(variance * roughness * scale / total)
        counts.append(total ** 2 / float(np.sum(w * w)))

    if degenerate:
        logger.warning("Degenerate variance in moment cells", cells=degenerate)

    logger.info(
        "Kernel moments estimated",
        n=n,
        bandwidth=h,
        family=cfg.family,
        effective_counts=[round(c, 1) for c in counts],
    )
    moments = MomentVector.from_cells(
        means,
        rate=math.sqrt(scale),
        rate_label="sqrt(nh)",
        cell_counts=tuple(counts),
        n=n,
        degenerate_cells=tuple(degenerate),
    )
    return moments, MomentCovariance.from_blocks(blocks)
