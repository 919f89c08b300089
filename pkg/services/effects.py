"""Treatment effects from identified quantities."""

from typing import Dict, Optional, Sequence

import numpy as np

from config.settings import settings
from models.effects import EffectsReport
from models.identification import DecompositionSet
from models.mixture import MixtureDecomposition
from models.moments import CellIndex
from utils.exceptions import (
    DegenerateTreatmentMassError,
    IdentificationError,
    InputSchemaError,
    ZeroDenominatorError,
)
from utils.logging_config import get_logger


logger = get_logger(__name__)

# Smallest Pr(T*=t|V=v) on which TT or TUT can condition.
MIN_TREATMENT_MASS = 1e-12


def late(
    e_y_by_z: Sequence[float],
    e_tstar_by_z: Sequence[float],
    tol: Optional[float] = None,
) -> float:
    """
    Wald ratio (E[Y|1,v] - E[Y|0,v]) / (Pr(T*=1|1,v) - Pr(T*=1|0,v)).

    Raises:
        ZeroDenominatorError: If the instrument does not shift Pr(T*=1)
    """
    tol = settings.tol_relevance if tol is None else tol
    denominator = e_tstar_by_z[1] - e_tstar_by_z[0]
    if abs(denominator) < tol or denominator == 0.0:
        raise ZeroDenominatorError(
            "Instrument does not shift the treatment probability",
            details={"pr_by_z": list(e_tstar_by_z)},
        )
    return (e_y_by_z[1] - e_y_by_z[0]) / denominator


def _late_or_none(e_y_by_z, pr_by_z, v: int) -> Optional[float]:
    try:
        return late(e_y_by_z, pr_by_z)
    except ZeroDenominatorError:
        logger.warning("LATE undefined for this covariate cell", v=v)
        return None


def _aggregate(values: np.ndarray, weights: np.ndarray) -> float:
    return float(values @ (weights / weights.sum()))


def _check_instrument_shares(pr_z_given_v: Sequence[float]) -> None:
    """Pr(Z=1|V=v) must be strictly inside (0, 1) for both v."""
    shares = np.asarray(pr_z_given_v, dtype=float)
    if shares.shape != (2,) or not np.all((shares > 0.0) & (shares < 1.0)):
        raise InputSchemaError(
            "Pr(Z=1|V=v) must lie strictly inside (0, 1) for v = 0, 1",
            details={"pr_z_given_v": shares.tolist()},
        )


def ate_tt_tut(
    mix: MixtureDecomposition,
    pr_z_given_v: Sequence[float],
    pr_v: Optional[float] = None,
) -> EffectsReport:
    """
    Average effects per v weighting beta(u, v) by identified latent-type probabilities.

    Pr(S*|V) marginalizes Pr(S*|Z,V) over the observed Pr(Z|V); Pr(U*|V),
    Pr(U*|T*=1,V) and Pr(U*|T*=0,V) follow by Bayes' rule.

    Args:
        mix: Mixture factors with recovered coefficients
        pr_z_given_v: Observed Pr(Z=1|V=v) for v=0,1
        pr_v: Observed Pr(V=1); when given, effects are also averaged over V

    Raises:
        InputSchemaError: If Pr(Z=1|V=v) is not strictly inside (0, 1)
        DegenerateTreatmentMassError: If Pr(T*=t|V=v) vanishes for TT or TUT
    """
    if mix.alpha_beta is None:
        raise IdentificationError("Mixture decomposition carries no coefficients")
    _check_instrument_shares(pr_z_given_v)
    coefficients = mix.alpha_beta
    k_u = mix.meta.k_u

    by_state = np.empty((2, mix.meta.k))
    for v in (0, 1):
        pz = pr_z_given_v[v]
        by_state[v] = (1.0 - pz) * mix.lam[CellIndex(0, v).position] + pz * mix.lam[CellIndex(1, v).position]
    by_type = by_state.reshape(2, k_u, 2)  # [v, u, t]

    pr_treated = by_type[:, :, 1].sum(axis=1)
    pr_untreated = by_type[:, :, 0].sum(axis=1)
    for v in (0, 1):
        for label, mass in (("treated", pr_treated[v]), ("untreated", pr_untreated[v])):
            if mass < MIN_TREATMENT_MASS:
                raise DegenerateTreatmentMassError(
                    f"Pr(T*={'1' if label == 'treated' else '0'}|V={v}) is {mass:.3e}",
                    details={"v": v, "group": label, "mass": float(mass)},
                )

    weights_u = by_type.sum(axis=2)
    weights_treated = by_type[:, :, 1] / pr_treated[:, None]
    weights_untreated = by_type[:, :, 0] / pr_untreated[:, None]

    beta = coefficients.beta.T  # [v, u]
    ate = (beta * weights_u).sum(axis=1)
    tt = (beta * weights_treated).sum(axis=1)
    tut = (beta * weights_untreated).sum(axis=1)

    late_values = []
    for v in (0, 1):
        ey, pr = [], []
        for z in (0, 1):
            lam = mix.lam[CellIndex(z, v).position]
            ey.append(float(lam @ coefficients.outcome_means[v]))
            pr.append(float(lam.reshape(k_u, 2)[:, 1].sum()))
        late_values.append(_late_or_none(ey, pr, v))

    aggregate = None
    if pr_v is not None:
        pv = np.array([1.0 - pr_v, pr_v])
        aggregate = {
            "ate": _aggregate(ate, pv),
            "tt": _aggregate(tt, pv * pr_treated),
            "tut": _aggregate(tut, pv * pr_untreated),
            "late": None if None in late_values else _aggregate(np.array(late_values), pv),
        }

    logger.info("Treatment effects computed", route="mixture", ate=ate.tolist(), tt=tt.tolist())
    return EffectsReport(
        late=None if None in late_values else np.array(late_values),
        ate=ate,
        tt=tt,
        tut=tut,
        pr_treated=pr_treated,
        weights_u=weights_u,
        weights_u_treated=weights_treated,
        weights_u_untreated=weights_untreated,
        route="mixture",
        aggregate=aggregate,
    )


def effects_from_decomposition(
    decomp: DecompositionSet,
    pr_z_given_v: Sequence[float],
    pr_v: Optional[float] = None,
) -> EffectsReport:
    """
    Effects in the binary model, where the effect is beta(v) for everyone.

    LATE(v) is the Wald ratio on the identified E[Y|z,v] and Pr(T*=1|z,v);
    ATE, TT and TUT all equal beta(v).

    Raises:
        InputSchemaError: If Pr(Z=1|V=v) is not strictly inside (0, 1)
    """
    _check_instrument_shares(pr_z_given_v)
    late_values = []
    for v in (0, 1):
        ey, pr = [], []
        for z in (0, 1):
            lam = decomp.lam[CellIndex(z, v).position]
            ey.append(float(lam @ decomp.outcome_means[v]))
            pr.append(float(lam[1]))
        late_values.append(_late_or_none(ey, pr, v))

    pr_treated = np.array([
        (1.0 - pr_z_given_v[v]) * decomp.lam[CellIndex(0, v).position, 1]
        + pr_z_given_v[v] * decomp.lam[CellIndex(1, v).position, 1]
        for v in (0, 1)
    ])
    beta = decomp.beta.copy()
    ones = np.ones((2, 1))

    aggregate: Optional[Dict[str, Optional[float]]] = None
    if pr_v is not None:
        pv = np.array([1.0 - pr_v, pr_v])
        aggregate = {
            "ate": _aggregate(beta, pv),
            "tt": _aggregate(beta, pv * pr_treated),
            "tut": _aggregate(beta, pv * (1.0 - pr_treated)),
            "late": None if None in late_values else _aggregate(np.array(late_values), pv),
        }

    logger.info("Treatment effects computed", route=decomp.route, beta=beta.tolist())
    return EffectsReport(
        late=None if None in late_values else np.array(late_values),
        ate=beta,
        tt=beta,
        tut=beta,
        pr_treated=pr_treated,
        weights_u=ones,
        weights_u_treated=ones,
        weights_u_untreated=ones,
        route=decomp.route,
        aggregate=aggregate,
    )
