# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Test the continuous-state objectives."""

import numpy as np
import pytest

from frequenz.mpf import (
    ContinuousDataset,
    DimensionMismatchError,
    GaussianModel,
    HmcConnectivity,
    HmcSchedule,
    HmpfObjective,
    IcaModel,
    LeapfrogConfig,
    PhaseState,
    augment_momenta,
    cube_mpf_objective,
    finite_diff_grad,
    hmpf_objective,
    initial_ica_parameters,
    iterate_mpf_hmc,
    lbfgs_minimize,
    leapfrog_transit,
    sample_ica,
    score_matching_objective,
)
from frequenz.mpf._types import FloatArray

PRECISION = np.array([[2.0, 0.5], [0.5, 1.0]])


class NumericGaussian(GaussianModel):
    """A Gaussian model that hides its closed-form score terms."""

    def laplacian_x(self, points: FloatArray, theta: FloatArray) -> FloatArray | None:
        """Hide the analytic Laplacian.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            Always `None`.
        """
        return None

    def score_terms(
        self, points: FloatArray, theta: FloatArray
    ) -> tuple[FloatArray, FloatArray] | None:
        """Hide the analytic score terms.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            Always `None`.
        """
        return None


def _gaussian_data(n: int, seed: int = 0) -> ContinuousDataset:
    rng = np.random.default_rng(seed)
    covariance = np.linalg.inv(PRECISION)
    return ContinuousDataset(rng.multivariate_normal(np.zeros(2), covariance, size=n))


class TestPhaseState:
    """Testing phase points."""

    def test_kinetic(self) -> None:
        """Test the kinetic energy of single points and batches."""
        single = PhaseState(np.zeros(2), np.array([1.0, 2.0]))
        assert single.kinetic() == pytest.approx(2.5)
        batch = PhaseState.stack([single, PhaseState(np.zeros(2), np.zeros(2))])
        assert np.allclose(batch.kinetic(), [2.5, 0.0])

    def test_shape_mismatch(self) -> None:
        """Test that position and momentum must have the same shape."""
        with pytest.raises(DimensionMismatchError):
            PhaseState(np.zeros(2), np.zeros(3))

    def test_augment_momenta(self) -> None:
        """Test that observations are kept and momenta are seeded."""
        data = _gaussian_data(5)
        phase = augment_momenta(data, seed=3)
        assert len(phase) == 5
        assert np.array_equal(np.stack([p.q for p in phase]), data.points)
        again = augment_momenta(data, seed=3)
        assert all(np.array_equal(a.v, b.v) for a, b in zip(phase, again))


class TestLeapfrog:
    """Testing the leapfrog transit."""

    def test_reversible(self) -> None:
        """Test that a transit applied twice returns to the start."""
        model = GaussianModel(2)
        theta = model.parameters(PRECISION)
        start = PhaseState(np.array([0.3, -1.2]), np.array([0.7, 0.1]))
        config = LeapfrogConfig(step_size=0.2, n_steps=15)
        end = leapfrog_transit(start, model, theta, config)
        back = leapfrog_transit(end, model, theta, config)
        assert np.allclose(back.q, start.q, atol=1e-12)
        assert np.allclose(back.v, start.v, atol=1e-12)
        assert not np.allclose(end.q, start.q)

    def test_nearly_conserves_energy(self) -> None:
        """Test that small steps keep the Hamiltonian almost constant."""
        model = GaussianModel(2)
        theta = model.parameters(PRECISION)
        start = PhaseState.stack(augment_momenta(_gaussian_data(20), seed=1))
        end = leapfrog_transit(start, model, theta, LeapfrogConfig(step_size=0.01, n_steps=50))
        before = model.energies(start.q, theta) + start.kinetic()
        after = model.energies(end.q, theta) + end.kinetic()
        assert np.abs(after - before).max() < 1e-3

    @pytest.mark.parametrize("d", [1, 2])
    def test_preserves_volume(self, d: int) -> None:
        """Test that the phase-space map has a unit Jacobian determinant.

        Args:
            d: The data dimension.
        """
        model = GaussianModel(d)
        theta = model.parameters(PRECISION[:d, :d])
        config = LeapfrogConfig(step_size=0.1, n_steps=10)
        point = np.random.default_rng(d).standard_normal(2 * d)

        def transit(z: FloatArray) -> FloatArray:
            end = leapfrog_transit(PhaseState(z[:d], z[d:]), model, theta, config)
            return np.concatenate([end.q, end.v])

        step = 1e-5
        jacobian = np.empty((2 * d, 2 * d))
        for k in range(2 * d):
            shift = np.zeros(2 * d)
            shift[k] = step
            jacobian[:, k] = (transit(point + shift) - transit(point - shift)) / (2.0 * step)
        assert abs(np.linalg.det(jacobian)) == pytest.approx(1.0, abs=1e-6)

    def test_free_particle(self) -> None:
        """Test that a flat energy moves points in straight lines."""
        model = GaussianModel(2)
        start = PhaseState(np.array([0.5, -1.0]), np.array([1.5, 0.25]))
        end = leapfrog_transit(
            start, model, np.zeros(model.layout.size), LeapfrogConfig(step_size=0.1, n_steps=7)
        )
        assert np.allclose(end.q, start.q + 0.7 * start.v, atol=1e-14)
        assert np.array_equal(end.v, -start.v)

    def test_harmonic_error_is_second_order(self) -> None:
        """Test that halving the step quarters the error on an oscillator."""
        model = GaussianModel(1)
        theta = model.parameters(np.eye(1))
        start = PhaseState(np.array([1.0]), np.array([0.0]))

        def error(step_size: float, n_steps: int) -> float:
            end = leapfrog_transit(start, model, theta, LeapfrogConfig(step_size, n_steps))
            exact = np.array([np.cos(1.0), np.sin(1.0)])
            return float(np.abs(np.concatenate([end.q, end.v]) - exact).max())

        coarse, medium, fine = error(0.1, 10), error(0.05, 20), error(0.025, 40)
        assert 3.5 <= coarse / medium <= 4.5
        assert 3.5 <= medium / fine <= 4.5

    def test_invalid_settings(self) -> None:
        """Test that out-of-range settings are rejected."""
        with pytest.raises(ValueError):
            LeapfrogConfig(step_size=0.0)
        with pytest.raises(ValueError):
            LeapfrogConfig(n_steps=0)


class TestHmpf:
    """Testing the Hamiltonian MPF objective."""

    def test_gradient(self) -> None:
        """Test the analytic gradient against finite differences."""
        model = GaussianModel(2)
        theta_h = model.parameters(PRECISION)
        phase = augment_momenta(_gaussian_data(30), seed=2)
        objective = HmpfObjective(model, phase, HmcConnectivity(theta_h))
        theta = model.parameters([[1.5, 0.2], [0.2, 0.8]])
        numeric = finite_diff_grad(objective, theta)
        assert np.allclose(objective(theta).gradient, numeric, atol=1e-7)

    def test_near_one_at_dynamics_parameters(self) -> None:
        """Test that accurate dynamics give terms close to one at `theta_H`."""
        model = GaussianModel(2)
        theta_h = model.parameters(PRECISION)
        phase = augment_momenta(_gaussian_data(50), seed=4)
        conn = HmcConnectivity(theta_h, LeapfrogConfig(step_size=0.01, n_steps=20))
        result = hmpf_objective(theta_h, phase, conn, model)
        assert result.value == pytest.approx(1.0, abs=1e-3)
        assert result.diagnostics.term_count == 50

    def test_invariant_to_order(self) -> None:
        """Test that reordering the phase points changes nothing."""
        model = GaussianModel(2)
        theta_h = model.parameters(PRECISION)
        phase = augment_momenta(_gaussian_data(25), seed=5)
        conn = HmcConnectivity(theta_h)
        theta = model.parameters([[1.2, -0.3], [-0.3, 0.9]])
        forward = HmpfObjective(model, phase, conn)(theta)
        backward = HmpfObjective(model, phase[::-1], conn)(theta)
        assert backward.value == pytest.approx(forward.value, rel=1e-12)
        assert np.allclose(backward.gradient, forward.gradient, rtol=1e-12, atol=1e-14)

    def test_transits_are_cached(self) -> None:
        """Test that transits do not depend on the evaluated parameters."""
        model = IcaModel(2)
        theta_h = np.eye(2).ravel()
        phase = augment_momenta(sample_ica(np.eye(2), 10, seed=0), seed=0)
        objective = HmpfObjective(model, phase, HmcConnectivity(theta_h))
        before = objective.transits.q.copy()
        objective(np.full(4, 0.3))
        assert np.array_equal(objective.transits.q, before)

    def test_empty(self) -> None:
        """Test that phase points are required."""
        with pytest.raises(ValueError):
            HmpfObjective(GaussianModel(2), [], HmcConnectivity(np.zeros(3)))


class TestIterateHmc:
    """Testing the alternating Hamiltonian MPF fit."""

    def test_rounds(self) -> None:
        """Test the trajectory bookkeeping and the callback."""
        model = IcaModel(2)
        data = sample_ica(np.array([[1.0, 0.3], [0.2, 1.0]]), 200, seed=0)
        rounds: list[int] = []
        trajectory = iterate_mpf_hmc(
            model,
            initial_ica_parameters(model, seed=1),
            data,
            HmcSchedule(outer_rounds=3, inner_steps=5),
            callback=lambda r, _theta, _value: rounds.append(r),
        )
        assert rounds == [0, 1, 2]
        assert len(trajectory.thetas) == 4
        assert len(trajectory.values) == 3
        assert not np.array_equal(trajectory.final, trajectory.thetas[0])

    def test_seeded(self) -> None:
        """Test that the fit is deterministic given the seed."""
        model = IcaModel(2)
        data = sample_ica(np.eye(2), 100, seed=1)
        schedule = HmcSchedule(outer_rounds=2, inner_steps=5, seed=9)
        start = initial_ica_parameters(model)
        first = iterate_mpf_hmc(model, start, data, schedule)
        second = iterate_mpf_hmc(model, start, data, schedule)
        assert np.array_equal(first.final, second.final)

    def test_gaussian_moves_toward_truth(self) -> None:
        """Test that the Gaussian precision estimate approaches the truth."""
        model = GaussianModel(2)
        data = _gaussian_data(2000, seed=5)
        start = model.parameters(np.eye(2))
        trajectory = iterate_mpf_hmc(
            model,
            start,
            data,
            HmcSchedule(outer_rounds=5, inner_steps=50, leapfrog=LeapfrogConfig(0.1, 5)),
        )
        truth = model.parameters(PRECISION)
        assert np.linalg.norm(trajectory.final - truth) < np.linalg.norm(start - truth)

    def test_initial_ica_parameters(self) -> None:
        """Test the size and the spread of the starting filters."""
        theta = initial_ica_parameters(IcaModel(10), seed=0)
        assert theta.shape == (100,)
        assert 0.07 < theta.std() < 0.13

    def test_invalid_schedule(self) -> None:
        """Test that negative counts are rejected."""
        with pytest.raises(ValueError):
            HmcSchedule(outer_rounds=-1)


class TestScoreMatching:
    """Testing score matching."""

    def test_closed_form_value(self) -> None:
        """Test the Gaussian value against a direct computation."""
        model = GaussianModel(2)
        data = _gaussian_data(100)
        theta = model.parameters(PRECISION)
        result = score_matching_objective(model, theta, data)
        gradients = data.points @ PRECISION
        expected = np.mean(0.5 * (gradients**2).sum(axis=1)) - np.trace(PRECISION)
        assert result.value == pytest.approx(expected)
        assert not result.diagnostics.finite_difference

    def test_finite_differences_agree(self) -> None:
        """Test that the numerical path matches the closed form."""
        data = _gaussian_data(50, seed=1)
        theta = GaussianModel(2).parameters([[1.2, -0.3], [-0.3, 0.7]])
        exact = score_matching_objective(GaussianModel(2), theta, data)
        numeric = score_matching_objective(NumericGaussian(2), theta, data)
        assert numeric.diagnostics.finite_difference
        assert numeric.value == pytest.approx(exact.value, rel=1e-7)
        assert np.allclose(numeric.gradient, exact.gradient, atol=1e-5)

    def test_minimum_is_inverse_second_moment(self) -> None:
        """Test that the Gaussian minimizer inverts the second-moment matrix."""
        model = GaussianModel(2)
        data = _gaussian_data(500, seed=2)
        theta, _ = lbfgs_minimize(
            lambda t: score_matching_objective(model, t, data), model.parameters(np.eye(2))
        )
        second = data.points.T @ data.points / len(data)
        assert np.allclose(model.precision(theta), np.linalg.inv(second), atol=1e-4)


class TestCubeMpf:
    """Testing MPF with a small hypercube connectivity."""

    @pytest.mark.parametrize("d", [1, 2])
    def test_small_cube_limit(self, d: int) -> None:
        """Test the expansion in the cube side around score matching.

        The rescaled value converges to the score matching objective with an
        error of order `e^2`, so each halving of the side quarters it.

        Args:
            d: The data dimension.
        """
        model = GaussianModel(d)
        theta = model.parameters(PRECISION[:d, :d])
        rng = np.random.default_rng(d)
        data = ContinuousDataset(2.0 * rng.standard_normal((40, d)))
        score = score_matching_objective(model, theta, data).value
        residuals = []
        for epsilon in (0.04, 0.02, 0.01):
            value = cube_mpf_objective(model, theta, data, epsilon)
            rescaled = (value - epsilon**d) / (epsilon ** (d + 2) / 48.0)
            residuals.append(abs(rescaled / score - 1.0))
        assert residuals[-1] < 1e-3
        for coarse, fine in zip(residuals, residuals[1:]):
            assert 3.5 < coarse / fine < 4.5

    def test_empty(self) -> None:
        """Test that observations are required."""
        model = GaussianModel(1)
        with pytest.raises(ValueError, match="at least one"):
            cube_mpf_objective(model, np.ones(1), ContinuousDataset(np.zeros((0, 1))), 0.1)

    def test_invalid_arguments(self) -> None:
        """Test the dimension, node count and side length checks."""
        data = ContinuousDataset(np.zeros((1, 3)))
        model = GaussianModel(3)
        with pytest.raises(ValueError):
            cube_mpf_objective(model, np.zeros(6), data, 0.1)
        small = GaussianModel(1)
        one = ContinuousDataset(np.zeros((1, 1)))
        with pytest.raises(ValueError):
            cube_mpf_objective(small, np.ones(1), one, 0.1, quad_points=4)
        with pytest.raises(ValueError):
            cube_mpf_objective(small, np.ones(1), one, 0.0)
