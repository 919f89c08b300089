"""Subcommand workflows and the argument parser of the ``misclass`` command."""

import argparse
import sys
import time
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from cli.io import LoadedInput, load_input, read_json, write_csv, write_json
from cli.schemas import TOLERANCE_KEYS, RunConfig, report_envelope
from config.settings import settings
from models.dgp import DgpSpec2, DgpSpecK
from models.identification import Tolerances
from models.mixture import MixtureSpecMeta, Partition
from models.moments import CellIndex, KernelConfig, MomentCovariance, MomentVector
from models.observations import ObservationTable
from services.dgp import oracle_moments, oracle_partition_moments, simulate
from services.effects import ate_tt_tut, effects_from_decomposition
from services.ident2 import build_q, identify
from services.identk import (
    conditional_outcome_dist,
    empirical_pr_z_given_v,
    fit_mixture,
    identify_alpha_beta_hetero,
    identify_mixture,
    partition_moments,
)
from services.mde import fit_minimum_distance
from services.moments import estimate_moments_discrete, estimate_moments_kernel
from services.montecarlo import run_montecarlo
from utils.exceptions import InputSchemaError, MisclassError
from utils.logging_config import configure_logging, get_logger, log_command, log_command_result, log_error


logger = get_logger(__name__)

COMMANDS = {
    "identify": "Closed-form identification from data, moments or a DGP",
    "estimate": "Minimum-distance estimation with delta-method standard errors",
    "simulate": "Draw a CSV sample from a DGP",
    "montecarlo": "Replicate simulate -> estimate and summarize sampling behaviour",
    "effects": "LATE, ATE, TT and TUT from an identified decomposition",
}


class CommandOutcome(NamedTuple):
    """Exit code, JSON report and, for ``simulate``, the sample to write."""

    exit_code: int
    report: Dict[str, Any]
    frame: Optional[pd.DataFrame] = None


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors follow the input-error exit code."""

    def error(self, message: str):
        raise InputSchemaError(f"Invalid arguments: {message}")


# =================================================================
# ARGUMENTS AND CONFIGURATION
# =================================================================
def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    # Every default is None so that unset flags fall through to --config and settings.
    parser.add_argument("--input", default=None, help="CSV sample, moments JSON or DGP JSON")
    parser.add_argument("--output", default=None, help="Report or CSV path (stdout when omitted)")
    parser.add_argument("--config", default=None, help="JSON file with RunConfig values")
    parser.add_argument("--mode", choices=["prop1", "prop2", "mixture"], default=None)
    parser.add_argument("--x", default=None, help="none | discrete:<v1,...> | kernel:<v1,...>")
    parser.add_argument("--kernel", choices=["gaussian", "epanechnikov"], default=None)
    parser.add_argument("--bandwidth", type=float, default=None)
    parser.add_argument("--ku", dest="k_u", type=int, default=None, help="Number of latent U* values")
    parser.add_argument("--partition", type=_float_list, default=None, help="Comma-separated cut points")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reps", type=int, default=None, help="Monte Carlo replications")
    parser.add_argument("--n", type=int, default=None, help="Sample size")
    parser.add_argument("--workers", type=int, default=None, help="Monte Carlo worker processes")
    parser.add_argument("--latent-dump", dest="latent_dump", action="store_true", default=None)
    parser.add_argument("--weighted", action="store_true", default=None, help="Omega-weighted distance")
    parser.add_argument("--aggregate", action="store_true", default=None, help="Also average effects over V")
    for key in TOLERANCE_KEYS:
        parser.add_argument(f"--tol-{key.replace('_', '-')}", dest=f"tol_{key}", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="misclass",
        description="Identification and estimation with a misclassified endogenous binary regressor",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        _add_run_arguments(sub.add_parser(name, help=text, description=text))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge CLI flags over ``--config`` file values over settings defaults.

    Raises:
        InputSchemaError: If the merged values do not form a consistent RunConfig
    """
    values: Dict[str, Any] = {"kernel": settings.kernel, "workers": settings.mc_workers}

    file_values: Dict[str, Any] = {}
    if args.config is not None:
        file_values = read_json(args.config)
        file_values.pop("command", None)
    tolerances = file_values.pop("tolerances", None) or {}
    if not isinstance(tolerances, dict):
        raise InputSchemaError("Config file tolerances must be an object", details={"path": args.config})
    tolerances = dict(tolerances)
    values.update(file_values)

    for field in ("input", "output", "mode", "x", "kernel", "bandwidth", "k_u", "partition",
                  "seed", "reps", "n", "workers", "latent_dump", "weighted", "aggregate"):
        flag = getattr(args, field)
        if flag is not None:
            values[field] = flag
    for key in TOLERANCE_KEYS:
        flag = getattr(args, f"tol_{key}")
        if flag is not None:
            tolerances[key] = flag

    try:
        return RunConfig(command=args.command, tolerances=tolerances, **values)
    except ValidationError as e:
        raise InputSchemaError(
            "Inconsistent run configuration",
            details={"errors": e.errors(include_url=False, include_context=False)},
        )


def _tolerances(config: RunConfig, exact: bool) -> Tolerances:
    """Identification regime for population moments, estimation regime otherwise."""
    factory = Tolerances.identification if exact else Tolerances.estimation
    return factory(**config.tolerances)


# =================================================================
# SHARED STAGES
# =================================================================
def _kernel_config(config: RunConfig) -> KernelConfig:
    return KernelConfig(family=config.kernel, bandwidth=config.bandwidth)


def _sample_moments(config: RunConfig, table: ObservationTable) -> Tuple[MomentVector, MomentCovariance]:
    point = config.x.scalar_or_vector
    if config.x.mode == "kernel":
        return estimate_moments_kernel(table, point, _kernel_config(config))
    return estimate_moments_discrete(table, x=point)


def _spec_point(config: RunConfig, spec: DgpSpec2) -> Optional[float]:
    if config.x.mode == "none":
        return None
    if not spec.has_x or len(config.x.point) != 1:
        raise InputSchemaError(
            "Covariate point does not match the DGP",
            details={"spec": spec.name, "point": list(config.x.point)},
        )
    return config.x.point[0]


def _binary_moments(config: RunConfig, loaded: LoadedInput) -> Tuple[MomentVector, bool]:
    """Moments for the closed-form routes and whether they are exact."""
    if loaded.kind == "observations":
        moments, _ = _sample_moments(config, loaded.payload)
        return moments, False
    if loaded.kind == "moments":
        return loaded.payload, loaded.payload.rate_label == "population"
    spec = loaded.payload
    if not isinstance(spec, DgpSpec2):
        raise InputSchemaError("Binary routes need a binary DGP", details={"kind": spec.kind})
    return oracle_moments(spec, x=_spec_point(config, spec)), True


def _pr_z_given_v(loaded: LoadedInput) -> Tuple[List[float], float]:
    """Pr(Z=1|V=v) for v=0,1 and Pr(V=1) from whatever the input carries."""
    if loaded.kind == "spec":
        return list(loaded.payload.pr_z_given_v), loaded.payload.pr_v
    if loaded.kind == "observations":
        table = loaded.payload
        return empirical_pr_z_given_v(table), float(np.mean(table.v))
    counts = np.asarray(loaded.payload.cell_counts, dtype=float)
    if counts.sum() <= 0:
        raise InputSchemaError("Moment document carries no cell counts to weight the effects")
    by_v = [counts[CellIndex(0, v).position] + counts[CellIndex(1, v).position] for v in (0, 1)]
    if min(by_v) <= 0:
        raise InputSchemaError("Moment document has an empty V cell", details={"cell_counts": counts.tolist()})
    pr_z = [counts[CellIndex(1, v).position] / by_v[v] for v in (0, 1)]
    return pr_z, by_v[1] / counts.sum()


def _mixture_meta(config: RunConfig, table: ObservationTable) -> MixtureSpecMeta:
    if config.k_u is not None:
        return MixtureSpecMeta(k_u=config.k_u)
    if table.u is None:
        raise InputSchemaError("Mixture mode needs --ku or a u column")
    return MixtureSpecMeta(k_u=int(table.u.max()) + 1)


def _mixture_world(config: RunConfig, spec) -> DgpSpecK:
    if isinstance(spec, DgpSpecK):
        if config.k_u is not None and config.k_u != spec.k_u:
            raise InputSchemaError(
                f"--ku {config.k_u} contradicts the DGP's K_u={spec.k_u}",
                details={"k_u": config.k_u, "spec_k_u": spec.k_u},
            )
        return spec
    if config.partition is None:
        raise InputSchemaError("Embedding a binary DGP as a mixture needs --partition")
    return DgpSpecK.from_binary(spec, config.partition)


def _mixture_decomposition(config: RunConfig, loaded: LoadedInput):
    """Mixture factors with coefficients, diagnostics and the outcome distribution."""
    if loaded.kind == "moments":
        raise InputSchemaError("Mixture mode needs a CSV sample or a DGP, not a moment vector")

    if loaded.kind == "spec":
        spec = _mixture_world(config, loaded.payload)
        tol = _tolerances(config, exact=True)
        cuts = config.partition if config.partition is not None else spec.partition
        meta = MixtureSpecMeta(k_u=spec.k_u)
        mix, diagnostics = identify_mixture(oracle_moments(spec, partition=cuts), meta, tol)
        coefficients = identify_alpha_beta_hetero(
            mix, spec.pr_z_given_v, oracle_partition_moments(spec, cuts, kind="outcome"), tol,
        )
        probability_tables = oracle_partition_moments(spec, cuts, kind="probability")
        return mix.with_alpha_beta(coefficients), diagnostics, conditional_outcome_dist(mix, probability_tables, tol)

    table = loaded.payload
    tol = _tolerances(config, exact=False)
    meta = _mixture_meta(config, table)
    partition = None if config.partition is None else Partition(cuts=config.partition)
    mix, diagnostics = fit_mixture(table, meta, partition, tol)
    probability_tables = partition_moments(table, Partition(cuts=mix.cuts), meta, kind="probability")
    return mix, diagnostics, conditional_outcome_dist(mix, probability_tables, tol)


def _estimation_sample(config: RunConfig, loaded: LoadedInput) -> ObservationTable:
    if loaded.kind == "observations":
        return loaded.payload
    if loaded.kind == "spec" and config.n is not None:
        return simulate(loaded.payload, config.n, config.seed, with_latent=False)
    raise InputSchemaError("Estimation needs a CSV sample, or a DGP together with --n")


# =================================================================
# WORKFLOWS
# =================================================================
def _run(config: RunConfig, workflow: Callable[[RunConfig], Any]) -> CommandOutcome:
    """Run a workflow and map its failure onto the exit-code contract."""
    try:
        result = workflow(config)
    except MisclassError as e:
        log_error(e)
        return CommandOutcome(e.exit_code, report_envelope(config.command, config, error=e.to_dict()))
    except OSError as e:
        log_error(e)
        error = {"error": "InputError", "message": str(e), "details": {"path": getattr(e, "filename", None)}}
        return CommandOutcome(1, report_envelope(config.command, config, error=error))

    logger.info("Workflow finished", command=config.command)
    if isinstance(result, pd.DataFrame):
        summary = {"rows": int(len(result)), "columns": list(result.columns)}
        return CommandOutcome(0, report_envelope(config.command, config, result=summary), frame=result)
    return CommandOutcome(0, report_envelope(config.command, config, result=result))


def _identify(config: RunConfig) -> Dict[str, Any]:
    loaded = load_input(config.input)
    if config.mode == "mixture":
        mix, diagnostics, outcome = _mixture_decomposition(config, loaded)
        return {
            "decomposition": mix.to_document(),
            "diagnostics": diagnostics.model_dump(mode="json"),
            "outcome_distribution": outcome.model_dump(mode="json"),
        }

    moments, exact = _binary_moments(config, loaded)
    decomposition, diagnostics = identify(build_q(moments), config.mode, _tolerances(config, exact))
    return {
        "regime": "identification" if exact else "estimation",
        "moments": moments.to_document(),
        "decomposition": decomposition.to_document(),
        "diagnostics": diagnostics.model_dump(mode="json"),
    }


def _estimate(config: RunConfig) -> Dict[str, Any]:
    if config.mode == "mixture":
        raise InputSchemaError("Minimum-distance estimation covers the binary model only")
    table = _estimation_sample(config, load_input(config.input))
    moments, omega = _sample_moments(config, table)
    report = fit_minimum_distance(moments, omega, tol=_tolerances(config, exact=False), weighted=config.weighted)
    return {
        "moments": moments.to_document(),
        "covariance": omega.to_document(),
        "estimate": report.to_document(),
    }


def _simulate(config: RunConfig) -> pd.DataFrame:
    loaded = load_input(config.input)
    if loaded.kind != "spec":
        raise InputSchemaError("Simulation needs a DGP document")
    table = simulate(loaded.payload, config.n, config.seed, with_latent=config.latent_dump)
    return table.to_frame(include_latent=config.latent_dump)


def _montecarlo(config: RunConfig) -> Dict[str, Any]:
    loaded = load_input(config.input)
    if loaded.kind != "spec":
        raise InputSchemaError("Monte Carlo runs need a DGP document")
    if config.x.mode == "discrete":
        raise InputSchemaError("Monte Carlo runs condition on x through the kernel only")
    kernel = _kernel_config(config) if config.x.mode == "kernel" else None
    point = _spec_point(config, loaded.payload) if isinstance(loaded.payload, DgpSpec2) else None
    summary = run_montecarlo(
        loaded.payload,
        n=config.n,
        replications=config.reps,
        seed=config.seed,
        workers=config.workers,
        x=point,
        kernel=kernel,
        tol=_tolerances(config, exact=False),
        weighted=config.weighted,
    )
    return summary.to_document()


def _effects(config: RunConfig) -> Dict[str, Any]:
    loaded = load_input(config.input)
    if config.mode == "mixture":
        mix, _, _ = _mixture_decomposition(config, loaded)
        pr_z, pr_v = _pr_z_given_v(loaded)
        report = ate_tt_tut(mix, pr_z, pr_v if config.aggregate else None)
        return {"effects": report.to_document(), "decomposition": mix.to_document()}

    moments, exact = _binary_moments(config, loaded)
    decomposition, _ = identify(build_q(moments), config.mode, _tolerances(config, exact))
    pr_z, pr_v = _pr_z_given_v(loaded)
    report = effects_from_decomposition(decomposition, pr_z, pr_v if config.aggregate else None)
    return {"effects": report.to_document(), "decomposition": decomposition.to_document()}


def cmd_identify(config: RunConfig) -> CommandOutcome:
    """Identify the decomposition (binary routes or mixture) and its diagnostics."""
    return _run(config, _identify)


def cmd_estimate(config: RunConfig) -> CommandOutcome:
    """Estimate moments from a sample and fit the minimum-distance system."""
    return _run(config, _estimate)


def cmd_simulate(config: RunConfig) -> CommandOutcome:
    """Draw ``n`` rows from a DGP; byte-stable in (spec, n, seed)."""
    return _run(config, _simulate)


def cmd_montecarlo(config: RunConfig) -> CommandOutcome:
    """Summarize R simulate-and-fit replications of a binary DGP."""
    return _run(config, _montecarlo)


def cmd_effects(config: RunConfig) -> CommandOutcome:
    """Treatment effects from the identified decomposition."""
    return _run(config, _effects)


HANDLERS: Dict[str, Callable[[RunConfig], CommandOutcome]] = {
    "identify": cmd_identify,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "effects": cmd_effects,
}


def _argument_failure(argv: Sequence[str], error: MisclassError) -> int:
    log_error(error, {"argv": list(argv)})
    command = next((a for a in argv if a in COMMANDS), "unknown")
    write_json(report_envelope(command, None, error=error.to_dict()))
    return error.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and write its output; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging(settings.log_level)
    start = time.time()

    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
    except MisclassError as e:
        return _argument_failure(argv, e)
    except OSError as e:
        return _argument_failure(argv, InputSchemaError(f"Could not read configuration: {e}"))

    log_command(config.command, input=config.input, mode=config.mode, seed=config.seed)
    outcome = HANDLERS[config.command](config)

    try:
        if outcome.frame is not None:
            write_csv(outcome.frame, config.output)
        else:
            target = None if config.command == "simulate" else config.output
            write_json(outcome.report, target)
        exit_code = outcome.exit_code
    except OSError as e:
        log_error(e, {"output": config.output})
        exit_code = 1

    log_command_result(config.command, exit_code, time.time() - start)
    return exit_code
