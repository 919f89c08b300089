"""Minimum-distance estimation of the 12-equation moment system with delta-method inference."""

import time
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from config.settings import settings
from models.estimation import PROBABILITY_SLICE, EstimateReport, ModelParams, SystemSolution
from models.identification import Diagnostics, Tolerances
from models.moments import CELLS, MomentCovariance, MomentVector, moment_index
from services.ident2 import build_q, identify_prop1, solve_alpha_beta
from utils.exceptions import (
    IdentificationError,
    InitializationFailedError,
    NoConvergenceError,
    SingularFError,
)
from utils.logging_config import get_logger, log_stage


logger = get_logger(__name__)

# Probability coordinates are kept this far inside (0, 1) before the logit.
PROJECTION_MARGIN = 1e-6


def _unpack(phi: np.ndarray):
    mu = phi[0:4].reshape(2, 2)      # [v, t]
    p = phi[4:8]                     # canonical cell order
    e = phi[8:12].reshape(2, 2)      # [z, t]
    return mu, p, e


def _phi_array(phi) -> np.ndarray:
    return phi.values if isinstance(phi, SystemSolution) else np.asarray(phi, dtype=float)


# =================================================================
# FORWARD MAP AND JACOBIAN
# =================================================================
def _f(phi: np.ndarray) -> np.ndarray:
    mu, p, e = _unpack(phi)
    out = np.empty(12)
    for cell in CELLS:
        pc = p[cell.position]
        m0, m1 = mu[cell.v]
        e0, e1 = e[cell.z]
        base = 3 * cell.position
        out[base] = (1.0 - pc) * m0 + pc * m1
        out[base + 1] = (1.0 - pc) * e0 + pc * e1
        out[base + 2] = (1.0 - pc) * m0 * e0 + pc * m1 * e1
    return out


def f_map(phi: SystemSolution) -> MomentVector:
    """Moments (E[Y], E[T], E[YT]) per cell implied by the 12 unknowns."""
    return MomentVector(values=_f(_phi_array(phi)))


def jacobian_f(phi) -> np.ndarray:
    """Analytic 12 x 12 derivative of ``f_map``; rows follow moments, columns follow phi."""
    phi = _phi_array(phi)
    mu, p, e = _unpack(phi)
    jac = np.zeros((12, 12))
    for cell in CELLS:
        pc = p[cell.position]
        m0, m1 = mu[cell.v]
        e0, e1 = e[cell.z]
        row = 3 * cell.position
        col_mu = 2 * cell.v
        col_p = 4 + cell.position
        col_e = 8 + 2 * cell.z

        jac[row, col_mu] = 1.0 - pc
        jac[row, col_mu + 1] = pc
        jac[row, col_p] = m1 - m0

        jac[row + 1, col_e] = 1.0 - pc
        jac[row + 1, col_e + 1] = pc
        jac[row + 1, col_p] = e1 - e0

        jac[row + 2, col_mu] = (1.0 - pc) * e0
        jac[row + 2, col_mu + 1] = pc * e1
        jac[row + 2, col_e] = (1.0 - pc) * m0
        jac[row + 2, col_e + 1] = pc * m1
        jac[row + 2, col_p] = m1 * e1 - m0 * e0
    return jac


# =================================================================
# PARAMETER MAP AND JACOBIAN
# =================================================================
def _ey_columns(v: int) -> Tuple[int, int]:
    return moment_index(CELLS[2 * v], "EY"), moment_index(CELLS[2 * v + 1], "EY")


def g_map(phi, m: MomentVector, relevance_tol: Optional[float] = None) -> ModelParams:
    """
    theta from phi and the moments: alpha(v), beta(v) solve the 2x2 relation
    against E[Y|z,v]; the probability coordinates are copied.

    Raises:
        SingularIVMatrixError: If Pr(T*=1|0,v) and Pr(T*=1|1,v) coincide
    """
    phi = _phi_array(phi)
    relevance_tol = settings.tol_relevance if relevance_tol is None else relevance_tol
    theta = phi.copy()
    for v in (0, 1):
        y0, y1 = (m.values[i] for i in _ey_columns(v))
        p0, p1 = phi[4 + 2 * v], phi[5 + 2 * v]
        theta[2 * v], theta[2 * v + 1] = solve_alpha_beta((y0, y1), (p0, p1), relevance_tol)
    return ModelParams(values=theta)


def jacobian_g(phi, m: MomentVector, relevance_tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic derivatives of ``g_map`` with respect to phi and to m.

    Returns:
        Tuple of (12 x 12 d theta / d phi, 12 x 12 d theta / d m)
    """
    phi = _phi_array(phi)
    relevance_tol = settings.tol_relevance if relevance_tol is None else relevance_tol
    d_phi = np.zeros((12, 12))
    d_m = np.zeros((12, 12))
    d_phi[PROBABILITY_SLICE, PROBABILITY_SLICE] = np.eye(8)
    for v in (0, 1):
        i0, i1 = _ey_columns(v)
        y0, y1 = m.values[i0], m.values[i1]
        c0, c1 = 4 + 2 * v, 5 + 2 * v
        p0, p1 = phi[c0], phi[c1]
        _, beta = solve_alpha_beta((y0, y1), (p0, p1), relevance_tol)
        det = p1 - p0
        a, b = 2 * v, 2 * v + 1

        d_m[b, i0] = -1.0 / det
        d_m[b, i1] = 1.0 / det
        d_phi[b, c0] = beta / det
        d_phi[b, c1] = -beta / det

        d_m[a, i0] = 1.0 + p0 / det
        d_m[a, i1] = -p0 / det
        d_phi[a, c0] = -beta - p0 * beta / det
        d_phi[a, c1] = p0 * beta / det
    return d_phi, d_m


# =================================================================
# OPTIMIZER
# =================================================================
def _to_free(phi: np.ndarray) -> np.ndarray:
    psi = phi.copy()
    psi[PROBABILITY_SLICE] = logit(np.clip(phi[PROBABILITY_SLICE], PROJECTION_MARGIN, 1.0 - PROJECTION_MARGIN))
    return psi


def _from_free(psi: np.ndarray) -> np.ndarray:
    phi = psi.copy()
    phi[PROBABILITY_SLICE] = expit(psi[PROBABILITY_SLICE])
    return phi


def _chain(psi: np.ndarray) -> np.ndarray:
    """d phi / d psi (diagonal)."""
    scale = np.ones(12)
    p = expit(psi[PROBABILITY_SLICE])
    scale[PROBABILITY_SLICE] = p * (1.0 - p)
    return scale


def _levenberg_marquardt(
    target: np.ndarray,
    phi0: np.ndarray,
    root_weight: Optional[np.ndarray],
) -> Tuple[np.ndarray, float, int, List[float]]:
    """Damped Gauss-Newton on ||W^(1/2) (target - f(phi))||^2 in the logistic coordinates."""

    def residual(psi: np.ndarray) -> np.ndarray:
        r = target - _f(_from_free(psi))
        return r if root_weight is None else root_weight @ r

    psi = _to_free(phi0)
    r = residual(psi)
    objective = float(r @ r)
    damping = settings.lm_initial_damping
    trace = [objective]

    for iteration in range(1, settings.lm_max_iter + 1):
        jac = jacobian_f(_from_free(psi)) * _chain(psi)[None, :]
        if root_weight is not None:
            jac = root_weight @ jac
        hessian = jac.T @ jac
        gradient = jac.T @ r
        try:
            step = np.linalg.solve(hessian + damping * np.eye(12), gradient)
        except np.linalg.LinAlgError:
            damping *= settings.lm_damping_factor
            continue

        candidate = psi + step
        r_new = residual(candidate)
        new_objective = float(r_new @ r_new)
        small_step = float(np.abs(step).max()) < settings.lm_step_tol

        if np.isfinite(new_objective) and new_objective <= objective:
            decrease = objective - new_objective
            psi, r, objective = candidate, r_new, new_objective
            trace.append(objective)
            damping /= settings.lm_damping_factor
            if small_step or decrease < settings.lm_objective_tol:
                return _from_free(psi), objective, iteration, trace
        else:
            if small_step:
                return _from_free(psi), objective, iteration, trace
            damping *= settings.lm_damping_factor

    raise NoConvergenceError(
        f"Minimum-distance fit did not converge in {settings.lm_max_iter} iterations",
        details={"objective": objective, "damping": damping},
    )


def _canonical(phi: np.ndarray) -> np.ndarray:
    """Relabel T* so that E[T|T*=0, z=0] < E[T|T*=1, z=0]; f is invariant under the swap."""
    mu, p, e = _unpack(phi)
    if e[0, 0] <= e[0, 1]:
        return phi
    return np.concatenate([mu[:, ::-1].ravel(), 1.0 - p, e[:, ::-1].ravel()])


def _random_start(rng: np.random.Generator, m_hat: MomentVector) -> np.ndarray:
    ey = m_hat.as_matrix()[:, 0]
    spread = max(float(ey.max() - ey.min()), 1.0)
    mu = rng.uniform(ey.min() - spread, ey.max() + spread, size=4)
    p = rng.uniform(0.05, 0.95, size=4)
    e = np.sort(rng.uniform(0.05, 0.95, size=(2, 2)), axis=1).ravel()
    return np.concatenate([mu, p, e])


def _fallback_fit(target, m_hat, root_weight, cause: IdentificationError):
    rng = np.random.default_rng(settings.fallback_seed)
    best = None
    for _ in range(settings.fallback_starts):
        start = _random_start(rng, m_hat)
        try:
            result = _levenberg_marquardt(target, start, root_weight)
        except NoConvergenceError:
            continue
        if best is None or result[1] < best[1]:
            best = result
    if best is None:
        raise InitializationFailedError(
            "Closed-form initialization failed and no fallback start converged",
            details={"cause": cause.code, "message": cause.message, "starts": settings.fallback_starts},
        )
    phi, objective, iterations, trace = best
    return _canonical(phi), objective, iterations, trace


def _weight_root(omega: MomentCovariance) -> Optional[np.ndarray]:
    values, vectors = np.linalg.eigh(omega.matrix)
    if values.min() <= 0.0:
        logger.warning("Moment covariance is not positive definite, fitting unweighted",
                       min_eigenvalue=float(values.min()))
        return None
    return (vectors / np.sqrt(values)) @ vectors.T


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def fit_minimum_distance(
    m_hat: MomentVector,
    omega: MomentCovariance,
    rate: Optional[float] = None,
    tol: Optional[Tolerances] = None,
    weighted: bool = False,
) -> EstimateReport:
    """
    Fit phi by minimizing ||m_hat - f(phi)||^2 and derive theta with standard errors.

    Initializes at the closed-form identification on m_hat; when that fails,
    runs a seeded grid of random starts and keeps the best fit.

    Args:
        m_hat: Estimated moments
        omega: Asymptotic covariance of the scaled moments
        rate: Convergence rate a_n (defaults to ``m_hat.rate``)
        tol: Thresholds for the closed-form initializer (estimation regime by default)
        weighted: Weight the distance by omega^-1

    Returns:
        EstimateReport with covariances of a_n (phi_hat - phi) and a_n (theta_hat - theta)
        and standard errors sqrt(diag) / a_n

    Raises:
        InitializationFailedError: If neither the closed form nor the fallback starts work
        NoConvergenceError: If the optimizer exhausts its iteration budget
        SingularFError: If F at the optimum is badly conditioned
    """
    tol = tol or Tolerances.estimation()
    rate = m_hat.rate if rate is None else rate
    start = time.time()
    target = m_hat.values
    root_weight = _weight_root(omega) if weighted else None

    diagnostics: Optional[Diagnostics] = None
    try:
        decomposition, diagnostics = identify_prop1(build_q(m_hat), tol)
        phi0 = SystemSolution.from_decomposition(decomposition).values.copy()
        phi0[PROBABILITY_SLICE] = np.clip(phi0[PROBABILITY_SLICE], 0.0, 1.0)
        phi, objective, iterations, trace = _levenberg_marquardt(target, phi0, root_weight)
        initialization = "closed_form"
    except IdentificationError as e:
        if isinstance(e, NoConvergenceError):
            raise
        logger.warning("Closed-form initialization failed, using fallback starts",
                       error_code=e.code, error_message=e.message)
        phi, objective, iterations, trace = _fallback_fit(target, m_hat, root_weight, e)
        initialization = "fallback"

    jac = jacobian_f(phi)
    cond = float(np.linalg.cond(jac))
    if not (np.isfinite(cond) and cond <= settings.max_cond_jacobian):
        raise SingularFError(
            "Jacobian of the moment map is singular at the optimum",
            details={"condition_number": cond, "max_cond": settings.max_cond_jacobian},
        )

    theta = g_map(phi, m_hat, tol.relevance)
    d_phi, d_m = jacobian_g(phi, m_hat, tol.relevance)

    f_inv = np.linalg.inv(jac)
    cov_phi = _symmetrize(f_inv @ omega.matrix @ f_inv.T)
    b = d_phi @ f_inv + d_m
    cov_theta = _symmetrize(b @ omega.matrix @ b.T)
    se_phi = np.sqrt(np.clip(np.diag(cov_phi), 0.0, None)) / rate
    se_theta = np.sqrt(np.clip(np.diag(cov_theta), 0.0, None)) / rate

    report = EstimateReport(
        theta=theta,
        phi=SystemSolution(values=phi),
        cov_theta=cov_theta,
        cov_phi=cov_phi,
        se_theta=se_theta,
        se_phi=se_phi,
        rate=rate,
        rate_label=m_hat.rate_label,
        objective=max(objective, 0.0),
        iterations=iterations,
        initialization=initialization,
        weighted=root_weight is not None,
        diagnostics=diagnostics,
        trace=trace,
    )
    log_stage("estimation", "minimum_distance", time.time() - start, True,
              objective=report.objective, iterations=iterations, initialization=initialization)
    return report
