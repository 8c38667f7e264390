# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Test the discrete minimum probability flow objective."""

# pylint doesn't understand fixtures. It thinks it is redefined name.
# pylint: disable=redefined-outer-name

from dataclasses import dataclass

import numpy as np
import pytest
from _pytest.logging import LogCaptureFixture
from pytest import fixture

from frequenz.mpf import (
    BitFlipConnectivity,
    ConnectivityMode,
    CouplingMatrix,
    DimensionMismatchError,
    DiscreteDataset,
    DiscreteEnergyModel,
    IsingModel,
    NonFiniteError,
    OptimizeStatus,
    Support,
    SupportError,
    enumerate_distribution,
    exact_sample,
    expected_sampled_objective,
    finite_diff_grad,
    fit_mpf,
    full_gamma,
    mpf_objective,
    mpf_objective_sampled,
    random_full_glass,
    stationarity_residual,
)
from frequenz.mpf._types import BitArray, FloatArray


@dataclass
class Problem:
    """A small glass with samples drawn from it."""

    model: IsingModel
    theta: FloatArray
    data: DiscreteDataset


@fixture
def problem() -> Problem:
    """Build a seeded 5-unit glass with 50 exact samples.

    Returns:
        The model, its true parameters and the samples.
    """
    coupling = random_full_glass(5, 1.0, seed=11)
    model = IsingModel(coupling.support)
    return Problem(model, model.parameters(coupling), exact_sample(coupling, 50, seed=3))


class ShiftedModel(DiscreteEnergyModel):
    """An Ising model whose energies are all offset by the same constant."""

    def __init__(self, base: IsingModel, shift: float) -> None:
        """Wrap a model.

        Args:
            base: The wrapped model.
            shift: The energy offset.
        """
        self.base = base
        self.shift = shift
        self.d = base.d
        self.layout = base.layout

    def energies(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Return the offset energies.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            The energies plus the shift.
        """
        return self.base.energies(states, theta) + self.shift

    def param_grads(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Return the unchanged parameter gradients.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            The wrapped model's gradients.
        """
        return self.base.param_grads(states, theta)


class TestMpfObjective:
    """Testing the MPF objective under bit flip connectivity."""

    def test_single_bit(self) -> None:
        """Test the objective of one data state on one bit."""
        model = IsingModel(Support.full(1))
        data = DiscreteDataset.from_samples([[0]])
        result = mpf_objective(model, np.array([2.0]), data)
        assert result.value == pytest.approx(np.exp(-1.0), abs=1e-12)
        assert result.gradient[0] == pytest.approx(-0.5 * np.exp(-1.0), abs=1e-12)

    def test_gradient_matches_finite_differences(self, problem: Problem) -> None:
        """Test the analytic gradient in both connectivity modes.

        Args:
            problem: The glass and samples.
        """
        for mode in ConnectivityMode:
            analytic = mpf_objective(problem.model, problem.theta, problem.data, mode).gradient
            numeric = finite_diff_grad(
                lambda t, m=mode: mpf_objective(problem.model, t, problem.data, m),
                problem.theta,
            )
            assert np.allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_energy_shift_invariance(self, problem: Problem) -> None:
        """Test that a constant energy offset leaves the objective unchanged.

        Args:
            problem: The glass and samples.
        """
        base = mpf_objective(problem.model, problem.theta, problem.data)
        shifted = mpf_objective(
            ShiftedModel(problem.model, 123.0), problem.theta, problem.data
        )
        assert shifted.value == pytest.approx(base.value, rel=1e-12)
        assert np.allclose(shifted.gradient, base.gradient, rtol=1e-10)

    def test_weight_scale_invariance(self, problem: Problem) -> None:
        """Test that multiplying every weight by a constant changes nothing.

        Args:
            problem: The glass and samples.
        """
        base = mpf_objective(problem.model, problem.theta, problem.data)
        scaled = mpf_objective(problem.model, problem.theta, problem.data.scaled(3.5))
        assert scaled.value == pytest.approx(base.value, rel=1e-12)

    def test_strict_mode_skips_data_neighbors(self) -> None:
        """Test that flows between two data states only count in all-neighbors mode."""
        model = IsingModel(Support.full(2))
        data = DiscreteDataset.from_samples([[0, 0], [1, 0]])
        theta = np.zeros(model.layout.size)
        strict = mpf_objective(model, theta, data, ConnectivityMode.STRICT)
        everything = mpf_objective(model, theta, data, ConnectivityMode.ALL_NEIGHBORS)
        assert strict.diagnostics.term_count == 2
        assert everything.diagnostics.term_count == 4
        assert strict.value == pytest.approx(1.0)
        assert everything.value == pytest.approx(2.0)

    def test_full_support_data_has_no_strict_flow(self) -> None:
        """Test that data covering every state has zero strict flow."""
        model = IsingModel(Support.full(3))
        data = enumerate_distribution(model, np.ones(model.layout.size)).as_dataset()
        result = mpf_objective(model, np.ones(model.layout.size), data)
        assert result.value == 0.0
        assert not result.gradient.any()

    def test_empty_data(self) -> None:
        """Test that an empty dataset has zero objective."""
        model = IsingModel(Support.full(3))
        data = DiscreteDataset.from_samples([], d=3)
        result = mpf_objective(model, np.ones(model.layout.size), data)
        assert result.value == 0.0
        assert result.gradient.shape == (model.layout.size,)

    def test_l2_penalty(self, problem: Problem) -> None:
        """Test that the penalty adds `l2 |theta|^2 / 2` and its gradient.

        Args:
            problem: The glass and samples.
        """
        base = mpf_objective(problem.model, problem.theta, problem.data)
        penalized = mpf_objective(problem.model, problem.theta, problem.data, l2=0.1)
        norm = float(problem.theta @ problem.theta)
        assert penalized.value == pytest.approx(base.value + 0.05 * norm)
        assert np.allclose(penalized.gradient, base.gradient + 0.1 * problem.theta)
        with pytest.raises(ValueError):
            mpf_objective(problem.model, problem.theta, problem.data, l2=-1.0)

    def test_complement_flip_matches_rate_matrix(self, problem: Problem) -> None:
        """Test the complement connections against the complete rate matrix.

        Args:
            problem: The glass and samples.
        """
        gamma = full_gamma(problem.model, problem.theta, complement_flip=True)
        result = mpf_objective(
            problem.model, problem.theta, problem.data, complement_flip=True
        )
        assert result.value == pytest.approx(gamma.data_outflow(problem.data), rel=1e-12)
        numeric = finite_diff_grad(
            lambda t: mpf_objective(problem.model, t, problem.data, complement_flip=True),
            problem.theta,
        )
        assert np.allclose(result.gradient, numeric, rtol=1e-6, atol=1e-8)

    def test_overflow_is_clamped(self, caplog: LogCaptureFixture) -> None:
        """Test that huge energy gaps are clamped and reported.

        Args:
            caplog: pytest fixture to capture log messages.
        """
        model = IsingModel(Support.full(1))
        data = DiscreteDataset.from_samples([[1]])
        result = mpf_objective(model, np.array([2000.0]), data)
        assert np.isfinite(result.value)
        assert result.value == pytest.approx(np.exp(700.0))
        assert result.diagnostics.clamped_terms == 1
        assert result.diagnostics.max_exponent == pytest.approx(1000.0)
        assert "Clamped" in caplog.text

    def test_non_finite_energy_raises(self) -> None:
        """Test that an infinite parameter is reported."""
        model = IsingModel(Support.full(1))
        data = DiscreteDataset.from_samples([[1]])
        with pytest.raises(NonFiniteError):
            mpf_objective(model, np.array([np.inf]), data)

    def test_dimension_mismatch(self, problem: Problem) -> None:
        """Test that data of another dimension is rejected.

        Args:
            problem: The glass and samples.
        """
        data = DiscreteDataset.from_samples([[0, 1, 0]])
        with pytest.raises(DimensionMismatchError):
            mpf_objective(problem.model, problem.theta, data)
        with pytest.raises(DimensionMismatchError):
            mpf_objective(problem.model, problem.theta[:-1], problem.data)


class TestSampledConnectivity:
    """Testing MPF with randomly sampled connections."""

    def test_certain_connections_match_all_neighbors(self, problem: Problem) -> None:
        """Test that always-on connections reproduce the deterministic objective.

        Args:
            problem: The glass and samples.
        """
        exact = mpf_objective(
            problem.model, problem.theta, problem.data, ConnectivityMode.ALL_NEIGHBORS
        )
        conn = BitFlipConnectivity(forward=1.0)
        sampled = mpf_objective_sampled(problem.model, problem.theta, problem.data, conn)
        expected = expected_sampled_objective(problem.model, problem.theta, problem.data, conn)
        assert sampled.value == pytest.approx(exact.value, rel=1e-12)
        assert expected.value == pytest.approx(exact.value, rel=1e-12)
        assert np.allclose(sampled.gradient, exact.gradient)

    def test_seeded_draws(self, problem: Problem) -> None:
        """Test that the draws depend only on the seed.

        Args:
            problem: The glass and samples.
        """
        conn = BitFlipConnectivity(forward=0.5, seed=4)
        first = mpf_objective_sampled(problem.model, problem.theta, problem.data, conn)
        second = mpf_objective_sampled(problem.model, problem.theta, problem.data, conn)
        assert first.value == second.value

    def test_unbiased(self, problem: Problem) -> None:
        """Test that the sampled estimate averages to its expectation.

        Args:
            problem: The glass and samples.
        """
        conn = BitFlipConnectivity(forward=0.5, reverse=0.25)
        expected = expected_sampled_objective(problem.model, problem.theta, problem.data, conn)
        values = [
            mpf_objective_sampled(
                problem.model, problem.theta, problem.data, conn.with_seed(seed)
            ).value
            for seed in range(1000)
        ]
        assert np.mean(values) == pytest.approx(expected.value, rel=0.05)

    def test_invalid_probability(self) -> None:
        """Test that connection probabilities outside (0, 1] are rejected."""
        with pytest.raises(SupportError):
            BitFlipConnectivity(forward=0.0)
        with pytest.raises(SupportError):
            BitFlipConnectivity(forward=0.5, reverse=1.5)


class TestStationarity:
    """Testing the stationarity of the true model under MPF."""

    def test_model_distribution_is_stationary(self, problem: Problem) -> None:
        """Test that the gradient vanishes with the model distribution as data.

        Args:
            problem: The glass and samples.
        """
        assert stationarity_residual(problem.model, problem.theta) < 1e-8


class TestFitMpf:
    """Testing MPF parameter estimation."""

    def test_recovers_parameters_from_model_distribution(self) -> None:
        """Test that fitting the exact distribution recovers the parameters."""
        coupling = random_full_glass(3, 1.0, seed=2)
        model = IsingModel(coupling.support)
        truth = model.parameters(coupling)
        data = enumerate_distribution(model, truth).as_dataset()
        theta, trace = fit_mpf(model, data, ConnectivityMode.ALL_NEIGHBORS)
        assert trace.status in (OptimizeStatus.GRAD_TOL, OptimizeStatus.F_TOL)
        assert np.allclose(theta, truth, atol=1e-4)

    def test_objective_decreases(self, problem: Problem) -> None:
        """Test that the fit lowers the objective and reports every iteration.

        Args:
            problem: The glass and samples.
        """
        visited: list[int] = []
        theta, trace = fit_mpf(
            problem.model,
            problem.data,
            l2=1e-3,
            callback=lambda iteration, _theta, _eval: visited.append(iteration),
        )
        start = mpf_objective(
            problem.model, np.zeros(problem.model.layout.size), problem.data, l2=1e-3
        )
        end = mpf_objective(problem.model, theta, problem.data, l2=1e-3)
        assert end.value < start.value
        assert visited == list(range(1, trace.n_iterations + 1))

    def test_lattice_fit_close_to_truth(self) -> None:
        """Test that a small lattice is recovered from many exact samples."""
        coupling = CouplingMatrix(
            Support.lattice(2, 2),
            np.array([0.6, -0.4, 0.5, -0.3]),
            np.array([0.2, -0.1, 0.0, 0.3]),
        )
        model = IsingModel(coupling.support)
        data = exact_sample(coupling, 20_000, seed=0)
        # Every state is observed, so only all-neighbors flow carries information.
        theta, _ = fit_mpf(model, data, ConnectivityMode.ALL_NEIGHBORS)
        assert np.abs(theta - model.parameters(coupling)).max() < 0.15

    def test_starts_agree(self, problem: Problem) -> None:
        """Test that random starts reach the same minimum of the convex objective.

        Args:
            problem: The glass and samples.
        """
        rng = np.random.default_rng(0)
        estimates = [
            fit_mpf(
                problem.model,
                problem.data,
                theta0=rng.normal(size=problem.model.layout.size),
                l2=1e-2,
            )[0]
            for _ in range(3)
        ]
        for estimate in estimates[1:]:
            assert np.abs(estimate - estimates[0]).max() < 1e-4
