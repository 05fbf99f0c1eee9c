"""Subcommands of the filematch command line.

Each subcommand has a parser builder and a handler ``cmd_<name>(args, config) -> int``.
Handlers read their inputs, call the services and write CSV tables to the global
``--output`` path or to stdout. Errors are left to the global handler in
``filematch.main``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from filematch.core.dependencies import create_em_engine, get_model_repository
from filematch.core.enums import (
    Block,
    Centering,
    CompletionMode,
    Criterion,
    Experiment,
    Method,
    Scaling,
)
from filematch.core.exceptions import DimensionMismatchError, InvalidArgumentError
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import (
    CommandConfig,
    EMConfig,
    ModelFile,
    RandomInit,
    SimDesign,
    SuppliedInit,
)
from filematch.rules.identifiability import (
    identifiability_report,
    max_factors,
    max_feasible_q,
)
from filematch.services import ingest, simulate
from filematch.services.gram_completion import complete_gram
from filematch.services.model_selection import select_q

log = logging.getLogger(__name__)

DEFAULT_METHODS = "fm,cia,als,softimpute,svdimpute,complete"


# Argument types

def _int_list(text: str) -> List[int]:
    try:
        values = [int(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _sizes(text: str) -> Tuple[int, int, int]:
    values = _int_list(text)
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected p_X,p_Y,p_Z, got {text!r}")
    return values[0], values[1], values[2]


def _methods(text: str) -> List[Method]:
    try:
        return [Method(token.strip()) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        allowed = ", ".join(m.value for m in Method)
        raise argparse.ArgumentTypeError(
            f"unknown method in {text!r} (allowed: {allowed})"
        ) from exc


def _names(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [token.strip() for token in text.split(",") if token.strip()]


# Shared argument groups

def _add_data_arguments(parser: argparse.ArgumentParser, covariances: bool = False) -> None:
    group = parser.add_argument_group("input data")
    group.add_argument("--a", type=Path, help="CSV of dataset A (columns X and Y)")
    group.add_argument("--b", type=Path, help="CSV of dataset B (columns X and Z)")
    group.add_argument("--shared", help="comma-separated shared columns (default: common names)")
    group.add_argument(
        "--centering",
        choices=[c.value for c in Centering],
        default=Centering.PER_DATASET.value,
    )
    group.add_argument(
        "--scaling", choices=[s.value for s in Scaling], default=Scaling.NONE.value
    )
    if covariances:
        group.add_argument("--cov-a", type=Path, help="covariance matrix CSV of dataset A")
        group.add_argument("--cov-b", type=Path, help="covariance matrix CSV of dataset B")
        group.add_argument("--n-a", type=int, help="rows behind --cov-a")
        group.add_argument("--n-b", type=int, help="rows behind --cov-b")


def _add_em_arguments(parser: argparse.ArgumentParser, init_model: bool = True) -> None:
    group = parser.add_argument_group("EM options")
    group.add_argument("--restarts", type=int, help="random starts (default from settings)")
    group.add_argument("--burn-iters", type=int, help="iterations of each random start")
    group.add_argument("--max-iter", type=int, help="iteration cap of the main run")
    group.add_argument("--tol", type=float, help="relative log-likelihood tolerance")
    if init_model:
        group.add_argument("--init-model", type=Path, help="model file to start EM from")


def _add_design_arguments(
    parser: argparse.ArgumentParser, sizes: Tuple[int, int, int], q_true: int
) -> None:
    group = parser.add_argument_group("simulation design")
    group.add_argument("--px", type=int, default=sizes[0])
    group.add_argument("--py", type=int, default=sizes[1])
    group.add_argument("--pz", type=int, default=sizes[2])
    group.add_argument("--q-true", type=int, default=q_true)
    group.add_argument("--n-a", type=int, help="rows of dataset A")
    group.add_argument("--n-b", type=int, help="rows of dataset B")
    group.add_argument("--loading-mean", type=float, default=2.0)
    group.add_argument("--loading-sd", type=float, default=1.0)
    group.add_argument("--uniqueness-base", type=float, default=3.0)
    group.add_argument("--uniqueness-sd", type=float, default=0.1)
    group.add_argument(
        "--standardize", action="store_true", help="rescale Sigma to a correlation matrix"
    )


# Helpers

def _emit(frame: pd.DataFrame, output: Optional[Path], index: bool = False) -> None:
    text = frame.to_csv(index=index)
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")
        log.info("Table written to %s.", output)


def _scatter(args: argparse.Namespace) -> ObservedScatter:
    shared = _names(args.shared)
    if args.a is not None and args.b is not None:
        pair = ingest.load_pair(args.a, args.b, shared)
        return ingest.to_scatter(pair, args.centering, args.scaling)
    if getattr(args, "cov_a", None) is not None and getattr(args, "cov_b", None) is not None:
        if args.n_a is None or args.n_b is None:
            raise InvalidArgumentError("--cov-a/--cov-b need the row counts --n-a and --n-b.")
        return ingest.load_scatter(args.cov_a, args.cov_b, args.n_a, args.n_b, shared)
    raise InvalidArgumentError(
        "Input data missing: give --a and --b, or --cov-a and --cov-b with --n-a and --n-b."
    )


def _em_config(args: argparse.Namespace, seed: int) -> Tuple[EMConfig, Optional[int]]:
    """EM settings from the flags; the q of a supplied start model is returned too."""
    values: Dict[str, Any] = {"seed": seed}
    if args.max_iter is not None:
        values["max_iter"] = args.max_iter
    if args.tol is not None:
        values["tol"] = args.tol
    start_q: Optional[int] = None
    init_path = getattr(args, "init_model", None)
    if init_path is not None:
        start = ingest.load_model(init_path, get_model_repository())
        start_q = start.q
        values["init"] = SuppliedInit(model=start)
    else:
        init: Dict[str, int] = {}
        if args.restarts is not None:
            init["restarts"] = args.restarts
        if args.burn_iters is not None:
            init["burn_iters"] = args.burn_iters
        values["init"] = RandomInit(**init)
    return EMConfig(**values), start_q


def _resolve_q(requested: Optional[int], fallback: Optional[int]) -> int:
    if requested is not None and fallback is not None and requested != fallback:
        raise InvalidArgumentError(f"--q {requested} disagrees with the model's q={fallback}.")
    q = requested if requested is not None else fallback
    if q is None:
        raise InvalidArgumentError("--q is required.")
    return q


def _design(args: argparse.Namespace, seed: int, n_default: int) -> SimDesign:
    return SimDesign(
        partition=PartitionSpec(args.px, args.py, args.pz),
        q_true=args.q_true,
        n_a=n_default if args.n_a is None else args.n_a,
        n_b=n_default if args.n_b is None else args.n_b,
        loading_mean=args.loading_mean,
        loading_sd=args.loading_sd,
        uniqueness_base=args.uniqueness_base,
        uniqueness_sd=args.uniqueness_sd,
        standardize=args.standardize,
        seed=seed,
    )


def _verdict(flag: Optional[bool]) -> str:
    if flag is None:
        return "not checked"
    return "yes" if flag else "no"


def _count(value: Fraction) -> str:
    return str(value.numerator) if value.denominator == 1 else str(float(value))


def _same_blocks(first: PartitionSpec, second: PartitionSpec) -> bool:
    return (first.p_x, first.p_y, first.p_z) == (second.p_x, second.p_y, second.p_z)


# check

def add_check_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "check", parents=[parent], help="identifiability diagnostics for a partition and q"
    )
    parser.add_argument("--px", type=int)
    parser.add_argument("--py", type=int)
    parser.add_argument("--pz", type=int)
    parser.add_argument("--q", type=int)
    parser.add_argument("--model", type=Path, help="model file for the numeric rank checks")
    parser.set_defaults(handler=cmd_check)


def cmd_check(args: argparse.Namespace, config: CommandConfig) -> int:
    """Prints C, C_M, the assumption verdicts and the largest q per criterion."""
    model: Optional[FactorModel] = None
    sizes = (args.px, args.py, args.pz)
    if args.model is not None:
        model = ingest.load_model(args.model, get_model_repository())
        pt = model.partition
        given = [(s, m) for s, m in zip(sizes, (pt.p_x, pt.p_y, pt.p_z)) if s is not None]
        if any(s != m for s, m in given):
            raise InvalidArgumentError("Partition flags disagree with the model file.")
        sizes = (pt.p_x, pt.p_y, pt.p_z)
        q = _resolve_q(args.q, model.q)
    else:
        if None in sizes:
            raise InvalidArgumentError("check needs --px, --py and --pz (or --model).")
        q = _resolve_q(args.q, None)
    p_x, p_y, p_z = sizes
    report = identifiability_report(p_x, p_y, p_z, q, model)

    rows = [
        ("C", _count(report.C), _verdict(report.feasible(Criterion.C))),
        ("C_M", _count(report.C_M), _verdict(report.feasible(Criterion.C_M))),
        ("assumption1_dim", f"q={q} p_X={p_x}", _verdict(report.assumption1_dim_ok)),
        (
            "assumption2_dim",
            f"2q={2 * q} p_X+p_Y={p_x + p_y} p_X+p_Z={p_x + p_z}",
            _verdict(report.assumption2_dim_ok),
        ),
        ("assumption1_numeric", "", _verdict(report.numeric_assumption1)),
        ("assumption2_numeric", "", _verdict(report.numeric_assumption2)),
    ]
    for criterion, name in (
        (Criterion.C, "max_q_C"),
        (Criterion.C_M, "max_q_C_M"),
        (Criterion.ASSUMPTION2, "max_q_Assumption2"),
    ):
        largest = max_factors(p_x, p_y, p_z, criterion)
        rows.append((name, str(largest), _verdict(q <= largest)))
    _emit(pd.DataFrame(rows, columns=["check", "value", "satisfied"]), config.output)
    return 0


# fit

def add_fit_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "fit", parents=[parent], help="file-matching EM fit on two CSV files"
    )
    _add_data_arguments(parser)
    parser.add_argument("--q", type=int, help="number of factors")
    _add_em_arguments(parser)
    parser.add_argument("--log", type=Path, help="CSV of the log-likelihood per iteration")
    parser.set_defaults(handler=cmd_fit)


def cmd_fit(args: argparse.Namespace, config: CommandConfig) -> int:
    """Fits the model and writes the model file (to --output or stdout)."""
    scatter = _scatter(args)
    em_config, start_q = _em_config(args, config.seed)
    q = _resolve_q(args.q, start_q)
    report = create_em_engine(config.threads).fit(scatter, q, em_config)
    if not report.converged:
        log.warning("EM stopped at the iteration cap without meeting the tolerance.")

    repository = get_model_repository()
    model_file = ModelFile.from_report(report)
    if config.output is None:
        sys.stdout.write(repository.dumps(model_file))
    else:
        repository.save(model_file, config.output)
    if args.log is not None:
        trace = pd.DataFrame(
            {
                "iteration": np.arange(1, report.iterations + 1),
                "loglik": list(report.loglik_trace),
            }
        )
        trace.to_csv(args.log, index=False)
    return 0


# complete

def add_complete_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "complete", parents=[parent], help="estimate Sigma_YZ by EM or Gram completion"
    )
    parser.add_argument(
        "--mode", choices=[m.value for m in CompletionMode], default=CompletionMode.EM.value
    )
    _add_data_arguments(parser, covariances=True)
    parser.add_argument("--q", type=int)
    parser.add_argument(
        "--model", type=Path, help="model file (uniquenesses for --mode gram, or alone)"
    )
    _add_em_arguments(parser)
    parser.set_defaults(handler=cmd_complete)


def _has_data(args: argparse.Namespace) -> bool:
    return any(getattr(args, name) is not None for name in ("a", "b", "cov_a", "cov_b"))


def cmd_complete(args: argparse.Namespace, config: CommandConfig) -> int:
    """
    Writes Sigma_YZ with Y labels as rows and Z labels as columns.

    em mode fits the model on the data; gram mode removes the uniquenesses of
    ``--model`` from the observed blocks and completes the Gram matrix. With a model
    and no data the model's own blocks are used.
    """
    mode = CompletionMode(args.mode)
    model = ingest.load_model(args.model, get_model_repository()) if args.model else None

    if not _has_data(args):
        if model is None:
            raise InvalidArgumentError("complete needs input data or --model.")
        pt = model.partition
        q = _resolve_q(args.q, model.q)
        if mode is CompletionMode.GRAM:
            gram = model.implied_covariance().minus_uniquenesses(model.psi)
            yz = complete_gram(gram, q)
        else:
            yz = model.implied_yz()
    else:
        scatter = _scatter(args)
        pt = scatter.partition
        if mode is CompletionMode.GRAM:
            if model is None:
                raise InvalidArgumentError("--mode gram needs --model for the uniquenesses.")
            if not _same_blocks(model.partition, pt):
                raise DimensionMismatchError(
                    f"Model partition {model.partition!r} does not match the data {pt!r}."
                )
            q = _resolve_q(args.q, model.q)
            observed = PartialCovariance.from_scatter(scatter).minus_uniquenesses(model.psi)
            yz = complete_gram(observed, q)
        else:
            em_config, start_q = _em_config(args, config.seed)
            q = _resolve_q(args.q, start_q)
            report = create_em_engine(config.threads).fit(scatter, q, em_config)
            yz = report.model.implied_yz()

    frame = pd.DataFrame(
        yz, index=list(pt.labels_of(Block.Y)), columns=list(pt.labels_of(Block.Z))
    )
    frame.index.name = "Y"
    _emit(frame, config.output, index=True)
    return 0


# select-q

def add_select_q_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "select-q", parents=[parent], help="BIC table over a range of q"
    )
    _add_data_arguments(parser, covariances=True)
    parser.add_argument("--q-min", type=int, default=1)
    parser.add_argument(
        "--q-max", type=int, help="default: largest q passing every identifiability criterion"
    )
    _add_em_arguments(parser, init_model=False)
    parser.set_defaults(handler=cmd_select_q)


def cmd_select_q(args: argparse.Namespace, config: CommandConfig) -> int:
    scatter = _scatter(args)
    pt = scatter.partition
    q_max = args.q_max
    if q_max is None:
        q_max = max(args.q_min, max_feasible_q(pt.p_x, pt.p_y, pt.p_z))
    if args.q_min < 1 or q_max < args.q_min:
        raise InvalidArgumentError(f"Empty q range {args.q_min}..{q_max}.")
    em_config, _ = _em_config(args, config.seed)
    table = select_q(
        scatter, range(args.q_min, q_max + 1), em_config, create_em_engine(config.threads)
    )
    _emit(table.to_frame(), config.output)
    return 0 if table.selected_q is not None else 1


# simulate

def add_simulate_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "simulate", parents=[parent], help="simulation experiments and data generation"
    )
    parser.add_argument(
        "--experiment", choices=[e.value for e in Experiment], required=True
    )
    _add_design_arguments(parser, (4, 4, 4), 3)
    parser.add_argument("--q-values", type=_int_list, help="q values, e.g. 3,4,5")
    parser.add_argument("--seeds", type=int, default=50, help="random starts per q")
    parser.add_argument(
        "--from-truth", action="store_true", help="start every run from the true model"
    )
    parser.add_argument(
        "--stop-early",
        action="store_true",
        help="identifiability: end runs at the tolerance instead of after --max-iter",
    )
    parser.add_argument("--replicates", type=int, default=20, help="BIC replicates")
    parser.add_argument("--out-a", type=Path, help="data: CSV for dataset A")
    parser.add_argument("--out-b", type=Path, help="data: CSV for dataset B")
    parser.add_argument("--truth", type=Path, help="data: model file of the true model")
    parser.add_argument("--plot", type=Path, help="identifiability or bic: SVG box plot")
    _add_em_arguments(parser, init_model=False)
    parser.set_defaults(handler=cmd_simulate)


def cmd_simulate(args: argparse.Namespace, config: CommandConfig) -> int:
    experiment = Experiment(args.experiment)
    design = _design(args, config.seed, 1000)

    if experiment is Experiment.DATA:
        if args.out_a is None or args.out_b is None:
            raise InvalidArgumentError("--experiment data needs --out-a and --out-b.")
        model, _ = simulate.sample_model(design)
        data_a, data_b, _ = simulate.sample_datasets(
            model, design.n_a, design.n_b, design.seed
        )
        pair = ingest.DatasetPair.from_arrays(data_a, data_b, design.partition)
        ingest.save_pair(pair, args.out_a, args.out_b)
        if args.truth is not None:
            ingest.save_model(model, args.truth, get_model_repository())
        log.info("Simulated %r written to %s and %s.", pair, args.out_a, args.out_b)
        return 0

    if experiment is Experiment.IDENTIFIABILITY:
        result = simulate.run_identifiability_experiment(
            design,
            q_values=args.q_values or [3, 4, 5],
            n_seeds=args.seeds,
            max_iter=10000 if args.max_iter is None else args.max_iter,
            tol=simulate.IDENTIFIABILITY_TOL if args.tol is None else args.tol,
            seed=config.seed,
            start_from_truth=args.from_truth,
            threads=config.threads,
            stop_early=args.stop_early,
        )
        _emit(result.to_frame(), config.output)
        if args.plot is not None:
            from filematch.cli.plots import plot_identifiability

            plot_identifiability(result, args.plot)
        return 0

    em_config, _ = _em_config(args, config.seed)
    bic = simulate.run_bic_experiment(
        design,
        q_values=args.q_values,
        n_replicates=args.replicates,
        seed=config.seed,
        config=em_config,
        threads=config.threads,
    )
    _emit(bic.to_frame(), config.output)
    log.info("BIC selections per q: %s", bic.selection_counts())
    if args.plot is not None:
        from filematch.cli.plots import plot_bic

        plot_bic(bic, args.plot)
    return 1 if all(r.error is not None for r in bic.replicates) else 0


# benchmark

def add_benchmark_parser(subparsers: Any, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "benchmark", parents=[parent], help="variable-permutation benchmark of the methods"
    )
    _add_design_arguments(parser, (3, 3, 3), 2)
    parser.add_argument("--data", type=Path, help="complete-data CSV instead of a design")
    parser.add_argument("--sizes", type=_sizes, help="p_X,p_Y,p_Z of each permutation")
    parser.add_argument("--q", type=int, help="factors / rank (default: --q-true)")
    parser.add_argument("--methods", type=_methods, default=_methods(DEFAULT_METHODS))
    parser.add_argument("--perms", type=int, default=100, help="number of permutations")
    parser.add_argument("--timings", action="store_true", help="add a runtime column")
    parser.add_argument("--plot", type=Path, help="SVG box plot per method")
    _add_em_arguments(parser, init_model=False)
    parser.set_defaults(handler=cmd_benchmark)


def cmd_benchmark(args: argparse.Namespace, config: CommandConfig) -> int:
    """
    Runs the benchmark and writes the per-replicate table; with --output a summary
    table (median, IQR, successful runs per method) goes to ``<output>.summary.csv``.
    Exits with 1 only when no method produced an estimate.
    """
    design: Optional[SimDesign] = None
    data: Optional[np.ndarray] = None
    split_a: Optional[int] = None
    if args.data is not None:
        if args.sizes is None or args.q is None:
            raise InvalidArgumentError("--data needs --sizes and --q.")
        data = ingest.load_table(args.data).to_numpy(dtype=float)
        sizes = args.sizes
        split_a = args.n_a
        q = args.q
    else:
        design = _design(args, config.seed, 2500)
        pt = design.partition
        sizes = args.sizes or (pt.p_x, pt.p_y, pt.p_z)
        q = design.q_true if args.q is None else args.q

    em_config, _ = _em_config(args, config.seed)
    result = simulate.run_permutation_benchmark(
        sizes,
        q,
        args.methods,
        design=design,
        data=data,
        n_a=split_a,
        n_perms=args.perms,
        seed=config.seed,
        config=em_config,
        threads=config.threads,
    )
    _emit(result.to_frame(include_runtime=args.timings), config.output)
    summary = result.summary()
    if config.output is not None:
        summary_path = Path(config.output).with_suffix(".summary.csv")
        summary.to_csv(summary_path, index=False)
        log.info("Summary written to %s.", summary_path)
    log.info("Benchmark summary:\n%s", summary.to_string(index=False))
    if args.plot is not None:
        from filematch.cli.plots import plot_benchmark

        plot_benchmark(result, args.plot)
    if result.failed:
        log.error("Every method failed on every permutation.")
        return 1
    return 0


PARSERS = (
    add_check_parser,
    add_fit_parser,
    add_complete_parser,
    add_select_q_parser,
    add_simulate_parser,
    add_benchmark_parser,
)
