# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""The `frequenz-mpf` command line.

Subcommands:

- `gen`: draw a true model and samples from it,
- `fit`: fit one estimator and write a report,
- `bench`: fit several estimators on the same data, or time the objective,
- `oracle`: run an exact numerical check.

Exit status is 0 on success, 1 on invalid input, 2 when an oracle check
fails and 3 on a runtime failure. Diagnostics go to standard error.
"""

from __future__ import annotations  # required for constructor type hinting

import argparse
import dataclasses
import logging
import re
import sys
import typing
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from ._baselines import (
    DEFAULT_CD_RATE_END,
    DEFAULT_CD_RATE_START,
    DEFAULT_CD_UPDATES,
    DEFAULT_MFT_REGULARIZATION,
    CdConfig,
    MftTapConfig,
)
from ._checks import CheckName, run_check
from ._exceptions import MpfError, ValidationError
from ._experiment import (
    DEFAULT_N_SAMPLES,
    DEFAULT_SIGMA2,
    DEFAULT_TRACK_INTERVAL,
    DataSpec,
    EstimatorKind,
    EstimatorSpec,
    ExperimentConfig,
    ModelFamily,
    ModelSpec,
    SamplerKind,
    family_of,
    resolve,
)
from ._harness import (
    DEFAULT_TIMING_SIZES,
    estimate_document,
    fit_experiment,
    generate_files,
    run_bench,
    timing_sweep,
    write_bench_csv,
)
from ._io import CHECK_SCHEMA, TIMING_SCHEMA, read_model, write_json, write_model
from ._model import CouplingMatrix, IsingModel
from ._mpf_continuous import (
    DEFAULT_INNER_STEPS,
    DEFAULT_N_STEPS,
    DEFAULT_OUTER_ROUNDS,
    DEFAULT_STEP_SIZE,
    HmcSchedule,
    LeapfrogConfig,
)
from ._optimize import DEFAULT_MAX_ITERS, OptimizerOptions
from ._oracle import DEFAULT_CORRELATION_BUDGET
from ._report import jsonable, write_report
from ._samplers import DEFAULT_BURN_IN, DEFAULT_THIN, ChainConfig
from ._types import ConnectivityMode

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CHECK_FAILED = 2
EXIT_RUNTIME = 3

_LATTICE = re.compile(r"^(\d+)x(\d+)$")
_CD_METHOD = re.compile(r"^cd-?(\d+)$")


class _Parser(argparse.ArgumentParser):
    """An argument parser that reports errors as `ValidationError`."""

    def error(self, message: str) -> typing.NoReturn:
        """Raise instead of exiting.

        Args:
            message: The parse error.

        Raises:
            ValidationError: Always.
        """
        raise ValidationError(f"{self.prog}: {message}")


def _lattice(text: str) -> tuple[int, int]:
    match = _LATTICE.match(text.strip())
    if match is None or int(match.group(1)) < 1 or int(match.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"invalid lattice {text!r}, expected RxC")
    return int(match.group(1)), int(match.group(2))


def _sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(part) for part in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid size list {text!r}") from e
    if any(size < 1 for size in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    family = group.add_mutually_exclusive_group()
    family.add_argument(
        "--lattice", type=_lattice, metavar="RxC", help="spin glass on an RxC lattice"
    )
    family.add_argument(
        "--full",
        type=int,
        nargs="?",
        const=0,
        metavar="D",
        help="fully connected spin glass; D inferred from the data when omitted",
    )
    family.add_argument(
        "--ica",
        type=int,
        nargs="?",
        const=0,
        metavar="D",
        help="square ICA model; D inferred from the data when omitted",
    )
    group.add_argument(
        "--sigma2", type=float, default=DEFAULT_SIGMA2, help="coupling variance"
    )
    group.add_argument("--truth", type=Path, help="true model file (JSON)")


def _add_data_options(parser: argparse.ArgumentParser, *, output: bool) -> None:
    group = parser.add_argument_group("data")
    group.add_argument(
        "--data",
        type=Path,
        required=output,
        help="dataset file to write" if output else "dataset file; sampled when omitted",
    )
    group.add_argument(
        "--samples", type=int, default=DEFAULT_N_SAMPLES, help="number of samples"
    )
    group.add_argument(
        "--sampler",
        choices=[kind.value for kind in SamplerKind],
        default=SamplerKind.GIBBS.value,
        help="binary sampler",
    )
    group.add_argument(
        "--burn-in", type=int, default=DEFAULT_BURN_IN, help="discarded sweeps"
    )
    group.add_argument("--thin", type=int, default=DEFAULT_THIN, help="sweeps per sample")
    group.add_argument("--chains", type=int, default=1, help="chains run in lock step")


def _add_estimator_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("estimator")
    group.add_argument(
        "--mode",
        choices=[mode.value for mode in ConnectivityMode],
        default=ConnectivityMode.STRICT.value,
        help="MPF connectivity: strict excludes data-state neighbors",
    )
    group.add_argument(
        "--complement-flip",
        action="store_true",
        help="also connect MPF data states to their complements",
    )
    group.add_argument("--l2", type=float, default=0.0, help="L2 penalty of MPF")
    group.add_argument(
        "--lambda",
        dest="regularization",
        type=float,
        default=DEFAULT_MFT_REGULARIZATION,
        help="ridge of the MFT+TAP pseudoinverse",
    )
    group.add_argument("--no-tap", action="store_true", help="naive mean field only")
    group.add_argument("--cd-k", type=int, default=1, help="Gibbs sweeps per CD update")
    group.add_argument(
        "--cd-updates", type=int, default=DEFAULT_CD_UPDATES, help="CD updates"
    )
    group.add_argument(
        "--cd-rate-start", type=float, default=DEFAULT_CD_RATE_START, help="first CD rate"
    )
    group.add_argument(
        "--cd-rate-end", type=float, default=DEFAULT_CD_RATE_END, help="last CD rate"
    )
    group.add_argument(
        "--leapfrog-step", type=float, default=DEFAULT_STEP_SIZE, help="leapfrog step"
    )
    group.add_argument(
        "--leapfrog-n", type=int, default=DEFAULT_N_STEPS, help="leapfrog steps per transit"
    )
    group.add_argument(
        "--rounds", type=int, default=DEFAULT_OUTER_ROUNDS, help="HMPF outer rounds"
    )
    group.add_argument(
        "--inner-steps",
        type=int,
        default=DEFAULT_INNER_STEPS,
        help="L-BFGS iterations per HMPF round",
    )
    group.add_argument(
        "--max-iters", type=int, default=DEFAULT_MAX_ITERS, help="L-BFGS iteration budget"
    )
    group.add_argument(
        "--track-interval",
        type=float,
        default=DEFAULT_TRACK_INTERVAL,
        help="wall-clock seconds between tracked rows",
    )
    group.add_argument(
        "--correlation-budget",
        type=int,
        default=DEFAULT_CORRELATION_BUDGET,
        help="Gibbs samples for model correlations when d > 20",
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser.

    Returns:
        The parser with its four subcommands.
    """
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    common.add_argument("--seed", type=int, default=0, help="seed of every random draw")
    formatter = argparse.ArgumentDefaultsHelpFormatter

    parser = _Parser(
        prog="frequenz-mpf",
        description="Minimum probability flow learning and its baselines.",
        formatter_class=formatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser(
        "gen", parents=[common], formatter_class=formatter, help="generate a model and data"
    )
    _add_model_options(gen)
    _add_data_options(gen, output=True)
    gen.add_argument("--model", type=Path, required=True, help="true model file to write")
    gen.add_argument("--manifest", type=Path, help="manifest file; next to the data by default")
    gen.set_defaults(handler=_cmd_gen)

    fit = commands.add_parser(
        "fit", parents=[common], formatter_class=formatter, help="fit one estimator"
    )
    _add_model_options(fit)
    _add_data_options(fit, output=False)
    fit.add_argument(
        "--estimator",
        choices=[kind.value for kind in EstimatorKind],
        default=EstimatorKind.MPF.value,
        help="the estimator",
    )
    _add_estimator_options(fit)
    fit.add_argument("--out", type=Path, required=True, help="report file to write")
    fit.add_argument("--model", type=Path, help="also write the estimated model here")
    fit.set_defaults(handler=_cmd_fit)

    bench = commands.add_parser(
        "bench", parents=[common], formatter_class=formatter, help="compare estimators"
    )
    _add_model_options(bench)
    _add_data_options(bench, output=False)
    bench.add_argument(
        "--methods",
        default="mpf,pl,cd-1",
        help="comma separated methods: mpf, pl, cd-K, mft-tap, mpf-hmc",
    )
    _add_estimator_options(bench)
    bench.add_argument(
        "--timing", action="store_true", help="time the MPF objective against M instead"
    )
    bench.add_argument(
        "--sizes",
        type=_sizes,
        default=DEFAULT_TIMING_SIZES,
        help="sample counts of the timing sweep",
    )
    bench.add_argument("--out", type=Path, required=True, help="output directory")
    bench.set_defaults(handler=_cmd_bench)

    oracle = commands.add_parser(
        "oracle", parents=[common], formatter_class=formatter, help="run an exact check"
    )
    oracle.add_argument(
        "--check", required=True, choices=[name.value for name in CheckName], help="the check"
    )
    oracle.add_argument("--d", type=int, default=8, help="dimension of the instance")
    oracle.add_argument("--out", type=Path, help="also write the result here (JSON)")
    oracle.set_defaults(handler=_cmd_oracle)
    return parser


def _model_spec(args: argparse.Namespace) -> ModelSpec:
    if args.truth is not None:
        return dataclasses.replace(family_of(read_model(args.truth).model), path=args.truth)
    if args.lattice is not None:
        rows, cols = args.lattice
        return ModelSpec(ModelFamily.ISING_LATTICE, rows, cols, sigma2=args.sigma2, seed=args.seed)
    for flag, family in (("ica", ModelFamily.ICA), ("full", ModelFamily.ISING_FULL)):
        value = getattr(args, flag)
        if value is not None:
            return ModelSpec(family, d=value or None, sigma2=args.sigma2, seed=args.seed)
    if getattr(args, "data", None) is not None and args.command != "gen":
        return ModelSpec(ModelFamily.ISING_FULL, sigma2=args.sigma2, seed=args.seed)
    return ModelSpec(sigma2=args.sigma2, seed=args.seed)


def _data_spec(args: argparse.Namespace, *, generated: bool) -> DataSpec:
    return DataSpec(
        path=None if generated else args.data,
        n_samples=args.samples,
        sampler=SamplerKind(args.sampler),
        chain=ChainConfig(args.burn_in, args.thin, args.seed, args.chains),
    )


def _estimator_spec(
    args: argparse.Namespace, kind: EstimatorKind, label: str = ""
) -> EstimatorSpec:
    return EstimatorSpec(
        kind=kind,
        mode=ConnectivityMode(args.mode),
        complement_flip=args.complement_flip,
        l2=args.l2,
        cd=CdConfig(
            args.cd_k, args.cd_rate_start, args.cd_rate_end, args.cd_updates, args.seed
        ),
        mft=MftTapConfig(args.regularization, tap_enabled=not args.no_tap),
        hmc=HmcSchedule(
            args.rounds,
            args.inner_steps,
            LeapfrogConfig(args.leapfrog_step, args.leapfrog_n),
            args.seed,
        ),
        label=label,
    )


def _experiment_config(
    args: argparse.Namespace, estimator: EstimatorSpec, *, generated: bool = False
) -> ExperimentConfig:
    return ExperimentConfig(
        model=_model_spec(args),
        data=_data_spec(args, generated=generated),
        estimator=estimator,
        optimizer=OptimizerOptions(max_iters=args.max_iters),
        track_interval=args.track_interval,
        correlation_budget=args.correlation_budget,
    )


def _cmd_gen(args: argparse.Namespace) -> int:
    model = _model_spec(args)
    kind = EstimatorKind.MPF if model.is_ising else EstimatorKind.MPF_HMC
    config = ExperimentConfig(
        model=model,
        data=_data_spec(args, generated=True),
        estimator=EstimatorSpec(kind=kind),
    )
    generate_files(config, args.data, args.model, args.manifest)
    return EXIT_OK


def _cmd_fit(args: argparse.Namespace) -> int:
    config = _experiment_config(args, _estimator_spec(args, EstimatorKind(args.estimator)))
    result = fit_experiment(resolve(config))
    write_report(args.out, result.report)
    if args.model is not None:
        write_model(args.model, estimate_document(result.family, result.theta))
    for name, value in result.report.final_metrics.items():
        _logger.info("%s = %.6g", name, value)
    return EXIT_OK


def _method(args: argparse.Namespace, name: str) -> EstimatorSpec:
    cd = _CD_METHOD.match(name)
    if cd is not None:
        spec = _estimator_spec(args, EstimatorKind.CONTRASTIVE_DIVERGENCE, label=name)
        return dataclasses.replace(spec, cd=dataclasses.replace(spec.cd, k=int(cd.group(1))))
    try:
        kind = EstimatorKind(name)
    except ValueError as e:
        raise ValidationError(f"Unknown benchmark method {name!r}") from e
    return _estimator_spec(args, kind, label=name)


def _cmd_bench(args: argparse.Namespace) -> int:
    names = [name.strip() for name in args.methods.split(",") if name.strip()]
    methods = [_method(args, name) for name in names]
    if not methods:
        raise ValidationError("--methods lists no method")
    config = _experiment_config(args, methods[0])
    args.out.mkdir(parents=True, exist_ok=True)
    if args.timing:
        experiment = resolve(config)
        if not isinstance(experiment.family, IsingModel):
            raise ValidationError("Timing needs a spin glass model")
        truth = experiment.truth
        if isinstance(truth, CouplingMatrix):
            theta = experiment.family.parameters(truth)
        else:
            theta = np.zeros(experiment.family.layout.size)
        timing = timing_sweep(experiment.family, theta, args.sizes, seed=args.seed)
        write_json(args.out / "timing.json", TIMING_SCHEMA, jsonable(timing))
        _logger.info("Evaluation time is linear in M with R^2 = %.4f", timing.r_squared)
        return EXIT_OK
    result = run_bench(config, methods)
    for name, report in result.reports.items():
        write_report(args.out / f"{name}.json", report)
    write_bench_csv(args.out / "bench.csv", result)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _cmd_oracle(args: argparse.Namespace) -> int:
    result = run_check(CheckName(args.check), args.d, args.seed)
    for m in result.measurements:
        print(
            f"{m.name}: {m.value:.3e} (threshold {m.threshold:.1e}) "
            f"{'pass' if m.passed else 'FAIL'}",
            file=sys.stderr,
        )
    print(f"{result.check.value}: {'pass' if result.passed else 'FAIL'}", file=sys.stderr)
    if args.out is not None:
        write_json(args.out, CHECK_SCHEMA, {**jsonable(result), "passed": result.passed})
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line.

    Args:
        argv: The arguments; `sys.argv[1:]` when omitted.

    Returns:
        The exit status.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        print(e, file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.handler(args))
    except np.linalg.LinAlgError as e:
        _logger.error("%s", e)
        return EXIT_RUNTIME
    except ValueError as e:
        _logger.error("%s", e)
        return EXIT_VALIDATION
    except (MpfError, OSError, FloatingPointError) as e:
        _logger.error("%s", e)
        return EXIT_RUNTIME
