# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Test the fitting harness."""

import csv
import io
from pathlib import Path

import numpy as np
import pytest

from frequenz.mpf import (
    BenchResult,
    CdConfig,
    ChainConfig,
    ContinuousDataset,
    DataSpec,
    EstimatorKind,
    EstimatorSpec,
    ExperimentConfig,
    HmcSchedule,
    IcaModel,
    IsingModel,
    ModelFamily,
    ModelSpec,
    SamplerKind,
    Support,
    ValidationError,
    VisitedPoint,
    exact_ml_fit,
    fit_experiment,
    generate_files,
    ica_log_likelihood,
    read_dataset,
    read_model,
    resolve,
    run_bench,
    select_rows,
    timing_sweep,
    write_bench_csv,
)
from frequenz.mpf._harness import format_bench_csv
from frequenz.mpf._io import MANIFEST_SCHEMA, read_json


def _config(estimator: EstimatorSpec | None = None) -> ExperimentConfig:
    return ExperimentConfig(
        model=ModelSpec(rows=3, cols=3, sigma2=1.0, seed=3),
        data=DataSpec(n_samples=2000, sampler=SamplerKind.EXACT),
        estimator=estimator or EstimatorSpec(),
        track_interval=0.0,
    )


def _points(*times: float) -> list[VisitedPoint]:
    return [VisitedPoint(t, np.array([t])) for t in times]


class TestSelectRows:
    """Testing the thinning of visited points."""

    def test_interval(self) -> None:
        """Test that points closer than the interval are dropped."""
        kept = select_rows(_points(0.0, 0.1, 0.6, 0.7, 1.2, 1.3), 0.5)
        assert [p.elapsed_s for p in kept] == [0.0, 0.6, 1.2, 1.3]

    def test_every_point(self) -> None:
        """Test that a zero interval keeps points with distinct timestamps."""
        kept = select_rows(_points(0.0, 0.1, 0.1, 0.2), 0.0)
        assert [p.elapsed_s for p in kept] == [0.0, 0.1, 0.2]

    def test_last_point_kept(self) -> None:
        """Test that the final point replaces a tie at the end."""
        points = _points(0.0, 0.6, 0.6)
        kept = select_rows(points, 0.5)
        assert kept[-1] is points[-1]
        assert [p.elapsed_s for p in kept] == [0.0, 0.6]

    def test_empty_and_single(self) -> None:
        """Test the degenerate inputs."""
        assert not select_rows([], 1.0)
        assert len(select_rows(_points(0.0), 1.0)) == 1


class TestFitExperiment:
    """Testing single fits."""

    def test_mpf_report(self) -> None:
        """Test the report of an MPF fit against a generated truth."""
        result = fit_experiment(resolve(_config()))
        report = result.report
        assert report.estimator == "mpf"
        assert set(report.parameters) == {"pairs", "biases"}
        assert len(report.parameters["pairs"]) == 12
        assert report.status in ("grad_tol", "f_tol", "line_search_failed")
        assert report.trace[0].elapsed_s == 0.0
        times = [row.elapsed_s for row in report.trace]
        assert times == sorted(set(times))
        assert all(row.eps_j is not None for row in report.trace)
        assert report.trace[-1].eps_j < report.trace[0].eps_j
        assert {"eps_j", "eps_corr", "data_eps_corr", "mean_abs_corr_error"} <= set(
            report.final_metrics
        )
        assert report.seeds == {"model": 3, "data": 0}

    def test_mft_report(self) -> None:
        """Test that the mean-field inversion has two tracked points."""
        result = fit_experiment(resolve(_config(EstimatorSpec(kind=EstimatorKind.MFT_TAP))))
        assert len(result.report.trace) == 2
        assert result.report.status == "completed"
        assert result.report.trace[0].objective is None

    def test_cd_report(self) -> None:
        """Test the tracked points and seeds of contrastive divergence."""
        estimator = EstimatorSpec(
            kind=EstimatorKind.CONTRASTIVE_DIVERGENCE, cd=CdConfig(k=1, n_updates=10, seed=5)
        )
        result = fit_experiment(resolve(_config(estimator)))
        assert result.report.estimator == "cd-1"
        assert 2 <= len(result.report.trace) <= 11
        assert result.report.seeds["estimator"] == 5

    def test_ica_report(self) -> None:
        """Test the likelihood metrics of a Hamiltonian MPF fit."""
        config = ExperimentConfig(
            model=ModelSpec(family=ModelFamily.ICA, d=2, seed=1),
            data=DataSpec(n_samples=200),
            estimator=EstimatorSpec(
                kind=EstimatorKind.MPF_HMC, hmc=HmcSchedule(outer_rounds=2, inner_steps=5)
            ),
        )
        report = fit_experiment(resolve(config)).report
        assert set(report.parameters) == {"filters"}
        assert {"log_likelihood", "truth_log_likelihood"} <= set(report.final_metrics)
        assert report.trace[-1].eps_j is None

    def test_without_truth(self, tmp_path: Path) -> None:
        """Test that a data-only fit reports no errors against a truth.

        Args:
            tmp_path: pytest fixture with a temporary directory.
        """
        data_path, model_path = tmp_path / "data.txt", tmp_path / "model.json"
        generate_files(_config(), data_path, model_path)
        config = ExperimentConfig(
            model=ModelSpec(rows=3, cols=3),
            data=DataSpec(data_path),
            track_interval=0.0,
        )
        report = fit_experiment(resolve(config)).report
        assert "eps_j" not in report.final_metrics
        assert "data_eps_corr" in report.final_metrics
        assert all(row.eps_j is None for row in report.trace)


class TestRecovery:
    """Testing recovery on larger problems."""

    @pytest.mark.slow
    def test_full_glass_correlations(self) -> None:
        """Test the correlations of an MPF fit on a fully connected glass."""
        config = ExperimentConfig(
            model=ModelSpec(family=ModelFamily.ISING_FULL, d=16, sigma2=1.0, seed=5),
            data=DataSpec(n_samples=20_000, chain=ChainConfig(seed=5, n_chains=20)),
            track_interval=5.0,
        )
        report = fit_experiment(resolve(config)).report
        assert report.final_metrics["mean_abs_corr_error"] <= 0.01

    @pytest.mark.slow
    def test_ica_close_to_maximum_likelihood(self) -> None:
        """Test that Hamiltonian MPF nearly reaches the maximum likelihood."""
        config = ExperimentConfig(
            model=ModelSpec(family=ModelFamily.ICA, d=4, seed=2),
            data=DataSpec(n_samples=10_000),
            estimator=EstimatorSpec(kind=EstimatorKind.MPF_HMC),
            track_interval=5.0,
        )
        experiment = resolve(config)
        report = fit_experiment(experiment).report
        assert isinstance(experiment.family, IcaModel)
        assert isinstance(experiment.data, ContinuousDataset)
        theta, _ = exact_ml_fit(experiment.data, experiment.family)
        best, _ = ica_log_likelihood(experiment.family.filters(theta), experiment.data.points)
        gap = abs(best - report.final_metrics["log_likelihood"])
        assert gap <= 0.02 * abs(best)


class TestGenerateFiles:
    """Testing the generation of model and data files."""

    def test_files_and_manifest(self, tmp_path: Path) -> None:
        """Test that the files match the manifest and read back.

        Args:
            tmp_path: pytest fixture with a temporary directory.
        """
        data_path, model_path = tmp_path / "data.txt", tmp_path / "model.json"
        manifest = generate_files(_config(), data_path, model_path)
        assert set(manifest) == {"model", "data", "files", "seeds", "versions"}
        assert manifest["files"] == {"data": str(data_path), "model": str(model_path)}
        stored = read_json(tmp_path / "data.txt.manifest.json", MANIFEST_SCHEMA)
        assert stored["seeds"] == manifest["seeds"]
        assert read_dataset(data_path).total_weight == 2000
        assert read_model(model_path).metadata["sampler"] == "exact"

    def test_seeded(self, tmp_path: Path) -> None:
        """Test that the same settings give the same files.

        Args:
            tmp_path: pytest fixture with a temporary directory.
        """
        for name in ("a", "b"):
            generate_files(
                _config(), tmp_path / f"{name}.txt", tmp_path / f"{name}.json", tmp_path / "m.json"
            )
        assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()
        assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


class TestBench:
    """Testing benchmarks over several estimators."""

    def test_failure_isolated(self) -> None:
        """Test that a failing method does not stop the others."""
        methods = [
            EstimatorSpec(),
            EstimatorSpec(kind=EstimatorKind.MPF_HMC),
            EstimatorSpec(kind=EstimatorKind.PSEUDOLIKELIHOOD),
        ]
        result = run_bench(_config(), methods)
        assert list(result.reports) == ["mpf", "pl"]
        assert list(result.failures) == ["mpf-hmc"]

    @pytest.mark.slow
    def test_recovery_order(self) -> None:
        """Test that MPF recovers a strongly coupled lattice best, then PL, then CD-1."""
        config = ExperimentConfig(
            model=ModelSpec(rows=5, cols=5, sigma2=10.0, seed=4),
            data=DataSpec(n_samples=20_000, chain=ChainConfig(seed=4, n_chains=20)),
            track_interval=5.0,
            correlation_budget=20_000,
        )
        methods = [
            EstimatorSpec(),
            EstimatorSpec(kind=EstimatorKind.PSEUDOLIKELIHOOD),
            EstimatorSpec(kind=EstimatorKind.CONTRASTIVE_DIVERGENCE),
        ]
        result = run_bench(config, methods)
        assert not result.failures
        errors = [result.reports[name].final_metrics["eps_j"] for name in ("mpf", "pl", "cd-1")]
        assert errors[0] < errors[1] < errors[2]

    def test_invalid_methods(self) -> None:
        """Test that methods must be given with distinct names."""
        with pytest.raises(ValidationError):
            run_bench(_config(), [])
        with pytest.raises(ValidationError):
            run_bench(_config(), [EstimatorSpec(), EstimatorSpec()])

    def test_csv(self, tmp_path: Path) -> None:
        """Test the CSV layout of the tracked rows.

        Args:
            tmp_path: pytest fixture with a temporary directory.
        """
        result = run_bench(
            _config(),
            [EstimatorSpec(), EstimatorSpec(kind=EstimatorKind.MFT_TAP)],
        )
        path = tmp_path / "bench.csv"
        write_bench_csv(path, result)
        rows = list(csv.reader(io.StringIO(path.read_text())))
        assert rows[0] == ["method", "elapsed_s", "eps_J", "eps_corr"]
        assert {row[0] for row in rows[1:]} == {"mpf", "mft-tap"}
        assert all(float(row[2]) >= 0.0 for row in rows[1:])

    def test_empty_result(self) -> None:
        """Test that an empty benchmark has only the header."""
        assert format_bench_csv(BenchResult()) == "method,elapsed_s,eps_J,eps_corr\n"


class TestTimingSweep:
    """Testing the objective timing sweep."""

    def test_result(self) -> None:
        """Test the shape of the result and the positivity of the times."""
        model = IsingModel(Support.lattice(5, 8))
        result = timing_sweep(
            model, np.zeros(model.layout.size), [100, 200, 400], repeats=1
        )
        assert result.sizes == (100, 200, 400)
        assert all(seconds > 0.0 for seconds in result.seconds)
        assert 0.0 <= result.r_squared <= 1.0

    @pytest.mark.slow
    def test_linear_in_samples(self) -> None:
        """Test that the evaluation time grows linearly with the sample count."""
        model = IsingModel(Support.lattice(10, 10))
        result = timing_sweep(model, np.zeros(model.layout.size))
        assert result.sizes[0] == 1000 and result.sizes[-1] == 64_000
        assert result.r_squared >= 0.99

    def test_needs_two_sizes(self) -> None:
        """Test that one size cannot be fitted with a line."""
        model = IsingModel(Support.full(3))
        with pytest.raises(ValidationError):
            timing_sweep(model, np.zeros(model.layout.size), [100])
