"""Replication engine: simulate, estimate moments, fit, and summarize sampling behaviour."""

import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import norm

from config.settings import settings
from models.dgp import DgpSpec2
from models.estimation import THETA_NAMES
from models.identification import Tolerances
from models.montecarlo import MonteCarloSummary, ParameterSummary
from models.moments import KernelConfig
from services.dgp import simulate, true_parameters
from services.mde import fit_minimum_distance
from services.moments import estimate_moments_discrete, estimate_moments_kernel
from utils.exceptions import MisclassError, SpecValidationError
from utils.logging_config import get_logger, log_stage


logger = get_logger(__name__)


# =================================================================
# WORKER (module-level so it pickles)
# =================================================================
def _replicate(job: Dict) -> Dict:
    """One replication; failures are reported by error code instead of raised."""
    try:
        table = simulate(job["spec"], job["n"], job["seed"], replication=job["replication"], with_latent=False)
        if job["kernel"] is not None:
            moments, omega = estimate_moments_kernel(table, job["x"], job["kernel"])
        else:
            moments, omega = estimate_moments_discrete(table)
        report = fit_minimum_distance(moments, omega, tol=job["tol"], weighted=job["weighted"])
    except MisclassError as e:
        return {"replication": job["replication"], "ok": False, "code": e.code}
    return {
        "replication": job["replication"],
        "ok": True,
        "theta": report.theta.values.tolist(),
        "se": report.se_theta.tolist(),
        "rate_label": report.rate_label,
    }


def _run_jobs(jobs: List[Dict], workers: int) -> List[Dict]:
    if workers <= 1:
        return [_replicate(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, jobs))


# =================================================================
# SUMMARY
# =================================================================
def summarize(
    results: List[Dict],
    truth: np.ndarray,
    coverage_level: float,
) -> List[ParameterSummary]:
    """Bias, RMSE, SD, SE calibration and interval coverage per theta component."""
    ok = [r for r in results if r["ok"]]
    if not ok:
        return []
    estimates = np.array([r["theta"] for r in ok])
    errors = np.array([r["se"] for r in ok])
    reps = estimates.shape[0]
    critical = norm.ppf(0.5 + coverage_level / 2.0)

    summaries = []
    for j, name in enumerate(THETA_NAMES):
        column = estimates[:, j]
        deviation = column - truth[j]
        mean_se = float(np.mean(errors[:, j]))
        sd = float(np.std(column, ddof=1)) if reps > 1 else None
        covered = np.abs(deviation) <= critical * errors[:, j]
        summaries.append(ParameterSummary(
            name=name,
            truth=float(truth[j]),
            mean=float(np.mean(column)),
            bias=float(np.mean(deviation)),
            rmse=float(np.sqrt(np.mean(deviation ** 2))),
            sd=sd,
            mean_se=mean_se,
            se_ratio=sd / mean_se if sd is not None and mean_se > 0 else None,
            coverage=float(np.mean(covered)) if reps > 1 else None,
        ))
    return summaries


def run_montecarlo(
    spec: DgpSpec2,
    n: int,
    replications: int,
    seed: int,
    workers: Optional[int] = None,
    x: Optional[float] = None,
    kernel: Optional[KernelConfig] = None,
    tol: Optional[Tolerances] = None,
    weighted: bool = False,
) -> MonteCarloSummary:
    """
    Run ``replications`` independent simulate-and-fit cycles of a binary world.

    Replication r draws from the stream derived from (seed, r), and results
    are aggregated in replication order, so the summary does not depend on
    the number of workers.

    Args:
        spec: Binary world to simulate
        n: Sample size per replication
        replications: Number of replications R
        seed: Base seed
        workers: Process-pool size (defaults to settings)
        x: Query point for kernel moments
        kernel: Kernel settings; discrete moments when None
        tol: Thresholds for the closed-form initializer
        weighted: Use the omega-weighted distance
    """
    if not isinstance(spec, DgpSpec2):
        raise SpecValidationError("Monte Carlo runs need a binary world", details={"kind": spec.kind})
    if replications < 1:
        raise SpecValidationError("At least one replication is required", details={"replications": replications})
    if kernel is not None and (x is None or not spec.has_x):
        raise SpecValidationError("Kernel Monte Carlo needs a query point and a world with X")

    workers = workers or settings.mc_workers
    tol = tol or Tolerances.estimation()
    start = time.time()
    jobs = [
        {"spec": spec, "n": n, "seed": seed, "replication": r, "x": x,
         "kernel": kernel, "tol": tol, "weighted": weighted}
        for r in range(replications)
    ]
    results = _run_jobs(jobs, workers)

    failures: Dict[str, int] = {}
    for result in results:
        if not result["ok"]:
            failures[result["code"]] = failures.get(result["code"], 0) + 1
    if failures:
        logger.warning("Monte Carlo replications failed", failures=failures)

    truth = true_parameters(spec, x if kernel is not None else None).values
    succeeded = replications - sum(failures.values())
    rate_label = next((r["rate_label"] for r in results if r["ok"]), None)
    summary = MonteCarloSummary(
        spec_name=spec.name,
        n=n,
        replications=replications,
        seed=seed,
        succeeded=succeeded,
        failures=dict(sorted(failures.items())),
        coverage_level=settings.mc_coverage_level,
        rate_label=rate_label,
        parameters=summarize(results, truth, settings.mc_coverage_level),
    )
    log_stage("montecarlo", "replications", time.time() - start, True,
              replications=replications, succeeded=succeeded, workers=workers)
    return summary
