# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Experiment runners: data generation, tracked fits, benchmarks and timing."""

from __future__ import annotations  # required for constructor type hinting

import csv
import dataclasses
import io
import logging
import os
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy import stats

from ._baselines import cd_train, fit_pseudolikelihood, mft_tap_fit
from ._dataset import ContinuousDataset, DiscreteDataset
from ._exceptions import MpfError, ValidationError
from ._experiment import (
    EstimatorKind,
    EstimatorSpec,
    Experiment,
    ExperimentConfig,
    FamilyModel,
    Truth,
    resolve,
)
from ._io import (
    MANIFEST_SCHEMA,
    JsonDocument,
    ModelDocument,
    write_atomic,
    write_continuous,
    write_dataset,
    write_json,
    write_model,
)
from ._metrics import (
    correlation_error,
    coupling_error,
    empirical_correlations,
    mean_abs_correlation_error,
)
from ._model import CouplingMatrix, IcaModel, IcaParameters, IsingModel
from ._mpf_continuous import initial_ica_parameters, iterate_mpf_hmc
from ._mpf_discrete import fit_mpf, mpf_objective
from ._optimize import OptimizeTrace, Trajectory
from ._oracle import ica_log_likelihood, model_pair_correlations
from ._report import FitReport, TrackRow, WarningCollector, jsonable, versions
from ._types import ConnectivityMode, FloatArray, ObjectiveEval

_logger = logging.getLogger(__name__)

DEFAULT_TIMING_SIZES = tuple(1000 * 2**k for k in range(7))
DEFAULT_TIMING_REPEATS = 3

_COMPLETED = "completed"


def _require_discrete(experiment: Experiment) -> tuple[IsingModel, DiscreteDataset]:
    family, data = experiment.family, experiment.data
    if not isinstance(family, IsingModel) or not isinstance(data, DiscreteDataset):
        raise ValidationError(
            f"{experiment.config.estimator.kind.value} needs a spin glass and binary data"
        )
    return family, data


def estimate_document(family: FamilyModel, theta: npt.ArrayLike) -> ModelDocument:
    """Wrap an estimate in a model document.

    Args:
        family: The fitted model family.
        theta: The estimate.

    Returns:
        The estimated model.
    """
    if isinstance(family, IcaModel):
        return ModelDocument(IcaParameters(family.filters(theta)), {"estimate": True})
    return ModelDocument(family.coupling(theta), {"estimate": True})


@dataclass(frozen=True, eq=False)
class VisitedPoint:
    """A parameter vector visited by an estimator.

    Attributes:
        elapsed_s: Wall-clock seconds since the fit started.
        theta: The parameters.
        objective: The objective value, if the estimator has one.
        grad_norm: Infinity norm of the objective gradient, if known.
    """

    elapsed_s: float
    theta: FloatArray
    objective: float | None = None
    grad_norm: float | None = None


@dataclass
class _Run:
    points: list[VisitedPoint] = field(default_factory=list)
    status: str = _COMPLETED


def _grad_norm(evaluation: ObjectiveEval) -> float:
    gradient = evaluation.gradient
    return float(np.abs(gradient).max()) if gradient.size else 0.0


class _LbfgsTracker:
    """Records every accepted L-BFGS iterate with its timestamp."""

    def __init__(self) -> None:
        self.start = time.perf_counter()
        self.points: list[VisitedPoint] = []

    def __call__(self, _: int, theta: FloatArray, evaluation: ObjectiveEval) -> None:
        self.points.append(
            VisitedPoint(
                time.perf_counter() - self.start,
                theta.copy(),
                evaluation.value,
                _grad_norm(evaluation),
            )
        )

    def run(self, start: FloatArray, trace: OptimizeTrace) -> _Run:
        first = trace.records[0] if trace.records else None
        initial = VisitedPoint(
            0.0,
            start,
            None if first is None else first.value,
            None if first is None else first.grad_norm,
        )
        return _Run([initial, *self.points], trace.status.value)


def _from_trajectory(trajectory: Trajectory) -> _Run:
    values: list[float | None] = [None, *trajectory.values]
    return _Run(
        [
            VisitedPoint(elapsed, theta, value)
            for elapsed, theta, value in zip(trajectory.elapsed_s, trajectory.thetas, values)
        ]
    )


def _run_estimator(experiment: Experiment) -> _Run:
    config = experiment.config
    spec = config.estimator
    if spec.kind is EstimatorKind.MPF_HMC:
        family, data = experiment.family, experiment.data
        if not isinstance(family, IcaModel) or not isinstance(data, ContinuousDataset):
            raise ValidationError("mpf-hmc needs the ICA family and continuous data")
        theta0 = initial_ica_parameters(family, spec.hmc.seed)
        return _from_trajectory(
            iterate_mpf_hmc(family, theta0, data, spec.hmc, options=config.optimizer)
        )

    ising, binary = _require_discrete(experiment)
    start = np.zeros(ising.layout.size)
    if spec.kind is EstimatorKind.CONTRASTIVE_DIVERGENCE:
        return _from_trajectory(cd_train(ising, start, binary, spec.cd))
    if spec.kind is EstimatorKind.MFT_TAP:
        clock = time.perf_counter()
        coupling = mft_tap_fit(binary, spec.mft, support=ising.support)
        final = VisitedPoint(time.perf_counter() - clock, ising.parameters(coupling))
        return _Run([VisitedPoint(0.0, start), final])

    tracker = _LbfgsTracker()
    if spec.kind is EstimatorKind.MPF:
        _, trace = fit_mpf(
            ising,
            binary,
            spec.mode,
            theta0=start,
            options=config.optimizer,
            complement_flip=spec.complement_flip,
            l2=spec.l2,
            callback=tracker,
        )
    else:
        _, trace = fit_pseudolikelihood(
            ising, binary, theta0=start, options=config.optimizer, callback=tracker
        )
    return tracker.run(start, trace)


def select_rows(points: Sequence[VisitedPoint], interval: float) -> list[VisitedPoint]:
    """Thin visited points to one per tracking interval.

    The first and the last point are always kept; timestamps of the result
    are strictly increasing.

    Args:
        points: The visited points in order.
        interval: Minimum wall-clock seconds between kept points.

    Returns:
        The kept points.
    """
    if not points:
        return []
    kept = [points[0]]
    for point in points[1:-1]:
        if point.elapsed_s > kept[-1].elapsed_s and (
            point.elapsed_s >= kept[-1].elapsed_s + interval
        ):
            kept.append(point)
    if len(points) > 1:
        last = points[-1]
        if last.elapsed_s > kept[-1].elapsed_s:
            kept.append(last)
        elif len(kept) > 1:
            kept[-1] = last
    return kept


class _Scorer:
    """Errors of parameter vectors against the true model."""

    def __init__(self, experiment: Experiment) -> None:
        config = experiment.config
        self.family = experiment.family
        self.data = experiment.data
        self.truth: Truth | None = experiment.truth
        self.budget = config.correlation_budget
        self.seed = config.model.seed
        self._true_correlations: FloatArray | None = None
        if isinstance(self.truth, CouplingMatrix):
            truth_model = IsingModel(self.truth.support)
            self._true_correlations = model_pair_correlations(
                truth_model, truth_model.parameters(self.truth), self.budget, self.seed
            )

    def _correlations(self, theta: FloatArray) -> FloatArray:
        assert isinstance(self.family, IsingModel)
        return model_pair_correlations(self.family, theta, self.budget, self.seed)

    def row(self, point: VisitedPoint) -> TrackRow:
        eps_j = eps_corr = None
        if isinstance(self.truth, CouplingMatrix) and isinstance(self.family, IsingModel):
            assert self._true_correlations is not None
            eps_j = coupling_error(self.truth, self.family.coupling(point.theta))
            eps_corr = correlation_error(self._true_correlations, self._correlations(point.theta))
        return TrackRow(point.elapsed_s, point.objective, point.grad_norm, eps_j, eps_corr)

    def final_metrics(self, theta: FloatArray) -> dict[str, float]:
        metrics: dict[str, float] = {}
        if isinstance(self.family, IcaModel) and isinstance(self.data, ContinuousDataset):
            if len(self.data):
                filters = self.family.filters(theta)
                metrics["log_likelihood"] = ica_log_likelihood(filters, self.data.points)[0]
                if isinstance(self.truth, IcaParameters):
                    metrics["truth_log_likelihood"] = ica_log_likelihood(
                        self.truth.filters, self.data.points
                    )[0]
            return metrics
        assert isinstance(self.family, IsingModel)
        correlations = self._correlations(theta)
        if isinstance(self.data, DiscreteDataset) and self.data.n_states:
            metrics["data_eps_corr"] = correlation_error(
                empirical_correlations(self.data), correlations
            )
        if isinstance(self.truth, CouplingMatrix):
            assert self._true_correlations is not None
            metrics["eps_j"] = coupling_error(self.truth, self.family.coupling(theta))
            metrics["eps_corr"] = correlation_error(self._true_correlations, correlations)
            metrics["mean_abs_corr_error"] = mean_abs_correlation_error(
                self._true_correlations, correlations
            )
        return metrics


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted estimate with its report.

    Attributes:
        theta: The estimate.
        family: The fitted model family.
        report: The report.
    """

    theta: FloatArray
    family: FamilyModel
    report: FitReport


def _seeds(config: ExperimentConfig) -> dict[str, int]:
    seeds = {"model": config.model.seed, "data": config.data.chain.seed}
    if config.estimator.kind is EstimatorKind.CONTRASTIVE_DIVERGENCE:
        seeds["estimator"] = config.estimator.cd.seed
    elif config.estimator.kind is EstimatorKind.MPF_HMC:
        seeds["estimator"] = config.estimator.hmc.seed
    return seeds


def fit_experiment(experiment: Experiment) -> FitResult:
    """Run the configured estimator and track it against the true model.

    Errors against the true model are computed after the fit for the points
    kept at the tracking interval, so their cost does not count in the
    timestamps.

    Args:
        experiment: The resolved experiment.

    Returns:
        The estimate and its report.
    """
    config = experiment.config
    _logger.info(
        "Fitting %s on %d-dimensional data", config.estimator.name, experiment.data.d
    )
    with WarningCollector() as collected:
        run = _run_estimator(experiment)
        theta = run.points[-1].theta
        scorer = _Scorer(experiment)
        rows = [scorer.row(point) for point in select_rows(run.points, config.track_interval)]
        metrics = scorer.final_metrics(theta)
    report = FitReport(
        config=jsonable(config),
        estimator=config.estimator.name,
        parameters={
            name: block.tolist() for name, block in experiment.family.layout.unpack(theta).items()
        },
        trace=rows,
        final_metrics=metrics,
        warnings=collected.messages,
        status=run.status,
        versions=versions(),
        seeds=_seeds(config),
    )
    return FitResult(theta, experiment.family, report)


def generate_files(
    config: ExperimentConfig,
    data_path: str | os.PathLike[str],
    model_path: str | os.PathLike[str],
    manifest_path: str | os.PathLike[str] | None = None,
) -> JsonDocument:
    """Generate a true model and samples from it, and write both.

    A manifest next to the dataset records the settings and seeds.

    Args:
        config: The model and data settings.
        data_path: Destination of the dataset.
        model_path: Destination of the true model.
        manifest_path: Destination of the manifest; `<data_path>.manifest.json`
            when omitted.

    Returns:
        The manifest fields.
    """
    document = config.model.load()
    data = config.data.generate(document.model)
    metadata = {**document.metadata, "sampler": config.data.sampler.value}
    write_model(model_path, ModelDocument(document.model, metadata))
    if isinstance(data, ContinuousDataset):
        write_continuous(data_path, data)
    else:
        write_dataset(data_path, data)
    manifest = {
        "model": jsonable(config.model),
        "data": jsonable(dataclasses.replace(config.data, path=None)),
        "files": {"data": os.fspath(data_path), "model": os.fspath(model_path)},
        "seeds": {"model": config.model.seed, "data": config.data.chain.seed},
        "versions": versions(),
    }
    target = manifest_path or Path(f"{os.fspath(data_path)}.manifest.json")
    write_json(target, MANIFEST_SCHEMA, manifest)
    _logger.info("Wrote %s, %s and %s", data_path, model_path, target)
    return manifest


@dataclass
class BenchResult:
    """The reports of a benchmark, one per method.

    Attributes:
        reports: The report of every method that finished, in run order.
        failures: The error message of every method that failed.
    """

    reports: dict[str, FitReport] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


def run_bench(config: ExperimentConfig, methods: Sequence[EstimatorSpec]) -> BenchResult:
    """Fit several estimators on the same data and true model.

    A failing method is logged and recorded; the others still run.

    Args:
        config: The shared model, data, optimizer and tracking settings.
        methods: The estimators to compare.

    Returns:
        The reports and failures.

    Raises:
        ValidationError: If no method is given or two share a name.
    """
    if not methods:
        raise ValidationError("A benchmark needs at least one method")
    names = [method.name for method in methods]
    if len(set(names)) != len(names):
        raise ValidationError(f"Benchmark method names repeat: {names}")
    experiment = resolve(config)
    result = BenchResult()
    for method in methods:
        try:
            method_config = dataclasses.replace(config, estimator=method)
            fit = fit_experiment(dataclasses.replace(experiment, config=method_config))
        except (MpfError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            _logger.error("Benchmark method %s failed: %s", method.name, e)
            result.failures[method.name] = str(e)
            continue
        result.reports[method.name] = fit.report
    return result


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def format_bench_csv(result: BenchResult) -> str:
    """Render the tracked rows of every method as CSV.

    Args:
        result: The benchmark reports.

    Returns:
        A CSV with the header `method,elapsed_s,eps_J,eps_corr`.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method", "elapsed_s", "eps_J", "eps_corr"])
    for name, report in result.reports.items():
        for row in report.trace:
            writer.writerow([name, repr(row.elapsed_s), _cell(row.eps_j), _cell(row.eps_corr)])
    return buffer.getvalue()


def write_bench_csv(path: str | os.PathLike[str], result: BenchResult) -> None:
    """Write the benchmark CSV.

    Args:
        path: The destination.
        result: The benchmark reports.
    """
    write_atomic(path, format_bench_csv(result))


@dataclass(frozen=True)
class TimingResult:
    """Evaluation time of the MPF objective against the number of samples.

    Attributes:
        sizes: The sample counts.
        seconds: The fastest evaluation time for every count.
        slope: Seconds per sample of the least squares line.
        intercept: Seconds at zero samples of the line.
        r_squared: Coefficient of determination of the line.
    """

    sizes: tuple[int, ...]
    seconds: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float


def timing_sweep(
    model: IsingModel,
    theta: npt.ArrayLike,
    sizes: Sequence[int] = DEFAULT_TIMING_SIZES,
    *,
    repeats: int = DEFAULT_TIMING_REPEATS,
    mode: ConnectivityMode = ConnectivityMode.STRICT,
    seed: int = 0,
) -> TimingResult:
    """Time one MPF evaluation on uniformly random datasets of growing size.

    Args:
        model: The Ising model family; large `d` keeps the random states distinct.
        theta: The flat parameter vector.
        sizes: The sample counts, at least two.
        repeats: Evaluations per count; the fastest is kept.
        mode: The connectivity mode.
        seed: Seed of the random states.

    Returns:
        The times and their line fit.

    Raises:
        ValidationError: If fewer than two sizes or no repeat is requested.
    """
    if len(sizes) < 2 or repeats < 1:
        raise ValidationError("Timing needs at least two sizes and one repeat")
    vector = model.layout.check(theta)
    rng = np.random.default_rng(seed)
    seconds = []
    for size in sizes:
        data = DiscreteDataset.from_samples(
            rng.integers(0, 2, size=(size, model.d)), d=model.d
        )
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            mpf_objective(model, vector, data, mode)
            best = min(best, time.perf_counter() - start)
        _logger.debug("MPF evaluation on %d samples: %.4g s", size, best)
        seconds.append(best)
    fit = stats.linregress(np.asarray(sizes, dtype=np.float64), np.asarray(seconds))
    return TimingResult(
        tuple(int(s) for s in sizes),
        tuple(seconds),
        float(fit.slope),
        float(fit.intercept),
        float(fit.rvalue**2),
    )
