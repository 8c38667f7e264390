# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""MPF for continuous states.

Observations are augmented with momenta and connected to the end point of a
momentum-negated leapfrog trajectory, which makes the connectivity an exact
involution. Score matching and the small hypercube connectivity are provided
for smooth energies.
"""

from __future__ import annotations  # required for constructor type hinting

import logging
import time
import typing
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from ._dataset import ContinuousDataset
from ._exceptions import DimensionMismatchError, NonFiniteError
from ._model import ContinuousEnergyModel, IcaModel
from ._mpf_discrete import clamped_exp
from ._optimize import OptimizerOptions, Trajectory, lbfgs_minimize
from ._types import FloatArray, ObjectiveDiagnostics, ObjectiveEval

_logger = logging.getLogger(__name__)

DEFAULT_STEP_SIZE = 0.1
DEFAULT_N_STEPS = 10
DEFAULT_OUTER_ROUNDS = 10
DEFAULT_INNER_STEPS = 100
DEFAULT_FD_STEP = 1e-4
DEFAULT_QUAD_POINTS = 16
MIN_QUAD_POINTS = 8
ICA_INIT_VARIANCE = 0.01


@dataclass(frozen=True, eq=False)
class PhaseState:
    """A position and its momentum, or a batch of them (one per row).

    Attributes:
        q: The position.
        v: The momentum, same shape as `q`.
    """

    q: FloatArray
    v: FloatArray

    def __post_init__(self) -> None:
        """Check that position and momentum match.

        Raises:
            DimensionMismatchError: If the shapes differ.
        """
        if np.shape(self.q) != np.shape(self.v):
            raise DimensionMismatchError(
                f"Position {np.shape(self.q)} and momentum {np.shape(self.v)} differ"
            )

    @classmethod
    def stack(cls, states: Sequence[PhaseState]) -> PhaseState:
        """Stack single phase points into a batch.

        Args:
            states: The phase points.

        Returns:
            A batch with one row per point.
        """
        return cls(np.stack([s.q for s in states]), np.stack([s.v for s in states]))

    def kinetic(self) -> FloatArray | float:
        """Return the kinetic energy `v^T v / 2`.

        Returns:
            One value per row of a batch, or a scalar.
        """
        return 0.5 * np.sum(np.square(self.v), axis=-1)


@dataclass(frozen=True)
class LeapfrogConfig:
    """Settings of the leapfrog integrator.

    Attributes:
        step_size: The integration step.
        n_steps: The number of steps.
    """

    step_size: float = DEFAULT_STEP_SIZE
    n_steps: int = DEFAULT_N_STEPS

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If a setting is out of range.
        """
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")


@dataclass(frozen=True, eq=False)
class HmcConnectivity:
    """Hamiltonian dynamics connectivity with its own, fixed parameters.

    Attributes:
        theta_h: Parameters of the energy driving the dynamics.
        config: The leapfrog settings.
    """

    theta_h: FloatArray
    config: LeapfrogConfig = field(default_factory=LeapfrogConfig)


def augment_momenta(
    data: ContinuousDataset, seed: int | Sequence[int] = 0
) -> list[PhaseState]:
    """Pair every observation with a momentum drawn from a unit Gaussian.

    Args:
        data: The observations.
        seed: Seed of the momentum draws.

    Returns:
        One phase point per observation.
    """
    rng = np.random.default_rng(seed)
    momenta = rng.standard_normal(data.points.shape)
    return [PhaseState(q.copy(), v) for q, v in zip(data.points, momenta)]


def _checked_grad(model: ContinuousEnergyModel, q: FloatArray, theta: FloatArray) -> FloatArray:
    gradient = model.grad_x(q, theta)
    if not np.isfinite(gradient).all():
        raise NonFiniteError("Non-finite energy gradient during a leapfrog transit")
    return gradient


def leapfrog_transit(
    x: PhaseState,
    model: ContinuousEnergyModel,
    theta_h: npt.ArrayLike,
    config: LeapfrogConfig | None = None,
) -> PhaseState:
    """Run leapfrog dynamics under `H = E(q) + v^T v / 2`, then negate the momentum.

    The map is its own inverse up to round-off.

    Args:
        x: A phase point or a batch of them.
        model: The energy model.
        theta_h: Parameters of the energy driving the dynamics.
        config: The leapfrog settings.

    Returns:
        The end point of the trajectory with negated momentum.

    Raises:
        NonFiniteError: If the energy gradient becomes non-finite.
    """
    settings = config or LeapfrogConfig()
    vector = model.layout.check(theta_h)
    single = np.ndim(x.q) == 1
    q = model.check_points(x.q).copy()
    v = np.array(x.v, dtype=np.float64).reshape(q.shape)
    half = 0.5 * settings.step_size
    gradient = _checked_grad(model, q, vector)
    for _ in range(settings.n_steps):
        v -= half * gradient
        q += settings.step_size * v
        gradient = _checked_grad(model, q, vector)
        v -= half * gradient
    if single:
        return PhaseState(q[0], -v[0])
    return PhaseState(q, -v)


class HmpfObjective:
    """The Hamiltonian MPF objective with transits cached for a fixed `theta_H`.

    For phase points `(q, v)` with transits `(q', v')` the value is
    `mean exp((E(q) + v^2/2 - E(q') - v'^2/2) / 2)`.
    """

    def __init__(
        self,
        model: ContinuousEnergyModel,
        phase_data: Sequence[PhaseState] | PhaseState,
        conn: HmcConnectivity,
    ) -> None:
        """Compute and cache the transits of all phase points.

        Args:
            model: The energy model.
            phase_data: The momentum-augmented observations.
            conn: The Hamiltonian connectivity.

        Raises:
            ValueError: If there are no phase points.
        """
        batch = phase_data if isinstance(phase_data, PhaseState) else None
        if batch is None:
            if not phase_data:
                raise ValueError("The HMPF objective needs at least one phase point")
            batch = PhaseState.stack(phase_data)
        self._model = model
        self._start = PhaseState(model.check_points(batch.q), np.atleast_2d(batch.v))
        self._end = leapfrog_transit(self._start, model, conn.theta_h, conn.config)
        self._kinetic_gap = np.asarray(self._start.kinetic()) - np.asarray(self._end.kinetic())

    @property
    def transits(self) -> PhaseState:
        """The cached transit end points, one per row."""
        return self._end

    def __call__(self, theta: npt.ArrayLike) -> ObjectiveEval:
        """Evaluate the objective.

        Args:
            theta: The flat parameter vector.

        Returns:
            The value, gradient and diagnostics.
        """
        vector = self._model.layout.check(theta)
        start_q, end_q = self._start.q, self._end.q
        energy_gap = self._model.energies(start_q, vector) - self._model.energies(end_q, vector)
        exponents = 0.5 * (energy_gap + self._kinetic_gap)
        terms = clamped_exp(exponents, np.ones(len(exponents), dtype=bool))
        if terms.clamped:
            _logger.warning("Clamped %d HMPF exponents", terms.clamped)
        n = len(exponents)
        grad_diff = self._model.param_grads(start_q, vector) - self._model.param_grads(
            end_q, vector
        )
        return ObjectiveEval(
            float(terms.values.sum() / n),
            0.5 * (terms.values @ grad_diff) / n,
            ObjectiveDiagnostics(
                max_exponent=terms.max_exponent,
                term_count=n,
                clamped_terms=terms.clamped,
            ),
        )


def hmpf_objective(
    theta: npt.ArrayLike,
    phase_data: Sequence[PhaseState],
    conn: HmcConnectivity,
    model: ContinuousEnergyModel,
) -> ObjectiveEval:
    """Evaluate the Hamiltonian MPF objective once.

    `theta_H` is held fixed and never differentiated; use `HmpfObjective`
    directly to reuse transits across evaluations.

    Args:
        theta: The flat parameter vector.
        phase_data: The momentum-augmented observations.
        conn: The Hamiltonian connectivity.
        model: The energy model.

    Returns:
        The value, gradient and diagnostics.
    """
    return HmpfObjective(model, phase_data, conn)(theta)


@dataclass(frozen=True)
class HmcSchedule:
    """Settings of the alternating Hamiltonian MPF fit.

    Attributes:
        outer_rounds: Number of `theta_H` refreshes.
        inner_steps: L-BFGS iterations per round.
        leapfrog: The leapfrog settings.
        seed: Seed of the momentum draws; round `r` uses `(seed, r)`.
    """

    outer_rounds: int = DEFAULT_OUTER_ROUNDS
    inner_steps: int = DEFAULT_INNER_STEPS
    leapfrog: LeapfrogConfig = field(default_factory=LeapfrogConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If a count is negative.
        """
        if self.outer_rounds < 0 or self.inner_steps < 0:
            raise ValueError("outer_rounds and inner_steps must be >= 0")


def initial_ica_parameters(model: IcaModel, seed: int = 0) -> FloatArray:
    """Draw starting filters with isotropic Gaussian entries of variance 0.01.

    Args:
        model: The ICA model family.
        seed: The random seed.

    Returns:
        The flat parameter vector.
    """
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(ICA_INIT_VARIANCE), size=model.layout.size)


ProgressCallback: typing.TypeAlias = typing.Callable[[int, FloatArray, float], None]
"""Called after every outer round with `(round, theta, value)`."""


def iterate_mpf_hmc(
    model: ContinuousEnergyModel,
    theta0: npt.ArrayLike,
    data: ContinuousDataset,
    schedule: HmcSchedule | None = None,
    *,
    options: OptimizerOptions | None = None,
    callback: ProgressCallback | None = None,
) -> Trajectory:
    """Fit by alternating truncated HMPF minimization with `theta_H` updates.

    Every round draws fresh momenta, builds the connectivity from the current
    estimate, runs at most `inner_steps` L-BFGS iterations and makes the
    result the next `theta_H`.

    Args:
        model: The energy model.
        theta0: The starting point, also the first `theta_H`.
        data: The observations.
        schedule: The round settings.
        options: Further L-BFGS settings; `max_iters` is taken from the schedule.
        callback: Called after every round.

    Returns:
        The estimate after every round (starting point first) and the
        objective value at the end of every round.
    """
    plan = schedule or HmcSchedule()
    theta = model.layout.check(theta0).copy()
    base = options or OptimizerOptions()
    inner = OptimizerOptions(
        memory=base.memory,
        max_iters=plan.inner_steps,
        grad_tol=base.grad_tol,
        f_tol=base.f_tol,
        wolfe_c1=base.wolfe_c1,
        wolfe_c2=base.wolfe_c2,
        max_line_search=base.max_line_search,
    )
    trajectory = Trajectory(thetas=[theta.copy()], elapsed_s=[0.0])
    clock_start = time.perf_counter()
    for round_index in range(plan.outer_rounds):
        phase = augment_momenta(data, (plan.seed, round_index))
        objective = HmpfObjective(model, phase, HmcConnectivity(theta.copy(), plan.leapfrog))
        theta, trace = lbfgs_minimize(objective, theta, inner)
        value = trace.records[-1].value if trace.records else objective(theta).value
        trajectory.thetas.append(theta.copy())
        trajectory.elapsed_s.append(time.perf_counter() - clock_start)
        trajectory.values.append(value)
        _logger.debug(
            "HMPF round %d: value %.6g after %d iterations",
            round_index,
            value,
            trace.n_iterations,
        )
        if callback is not None:
            callback(round_index, theta, value)
    return trajectory


def _laplacian_by_differences(
    model: ContinuousEnergyModel, points: FloatArray, theta: FloatArray, h: float
) -> FloatArray:
    total = np.zeros(len(points))
    for i in range(model.d):
        step = np.zeros(model.d)
        step[i] = h
        upper = model.grad_x(points + step, theta)[:, i]
        lower = model.grad_x(points - step, theta)[:, i]
        total += (upper - lower) / (2.0 * h)
    return total


def _score_values(
    model: ContinuousEnergyModel, points: FloatArray, theta: FloatArray, h: float
) -> FloatArray:
    gradient = model.grad_x(points, theta)
    laplacian = model.laplacian_x(points, theta)
    if laplacian is None:
        laplacian = _laplacian_by_differences(model, points, theta, h)
    return np.asarray(0.5 * (gradient**2).sum(axis=1) - laplacian)


def score_matching_objective(
    model: ContinuousEnergyModel,
    theta: npt.ArrayLike,
    data: ContinuousDataset,
    h: float = DEFAULT_FD_STEP,
) -> ObjectiveEval:
    """Evaluate `mean(|grad E|^2 / 2 - laplacian E)` over the data.

    Models with closed-form score terms are evaluated exactly; otherwise the
    Laplacian and the parameter gradient come from central differences with
    step `h`, which is flagged in the diagnostics.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        data: The observations.
        h: Finite difference step.

    Returns:
        The value, gradient and diagnostics.

    Raises:
        NonFiniteError: If a derivative is not finite.
    """
    vector = model.layout.check(theta)
    points = model.check_points(data.points)
    n = max(len(points), 1)
    analytic = model.score_terms(points, vector)
    if analytic is not None:
        values, grads = analytic
        result = ObjectiveEval(
            float(values.sum() / n),
            grads.sum(axis=0) / n,
            ObjectiveDiagnostics(term_count=len(points)),
        )
    else:
        gradient = np.empty(model.layout.size)
        for k in range(model.layout.size):
            step = np.zeros(model.layout.size)
            step[k] = h
            upper = _score_values(model, points, vector + step, h).sum()
            lower = _score_values(model, points, vector - step, h).sum()
            gradient[k] = (upper - lower) / (2.0 * h * n)
        result = ObjectiveEval(
            float(_score_values(model, points, vector, h).sum() / n),
            gradient,
            ObjectiveDiagnostics(term_count=len(points), finite_difference=True),
        )
    if not (np.isfinite(result.value) and np.isfinite(result.gradient).all()):
        raise NonFiniteError("Non-finite score matching objective")
    return result


def cube_mpf_objective(
    model: ContinuousEnergyModel,
    theta: npt.ArrayLike,
    data: ContinuousDataset,
    epsilon: float,
    quad_points: int = DEFAULT_QUAD_POINTS,
) -> float:
    """Evaluate MPF with connectivity to a small hypercube around each point.

    The value is `mean_x integral_{[-e/2, e/2]^d} exp((E(x) - E(x + a)) / 2) da`
    by tensor Gauss-Legendre quadrature. As `e -> 0` it approaches
    `e^d + e^(d+2) / 48 * K_SM`.

    Args:
        model: The energy model, `d <= 2`.
        theta: The flat parameter vector.
        data: The observations.
        epsilon: The cube side length.
        quad_points: Quadrature nodes per axis, at least 8.

    Returns:
        The quadrature estimate averaged over the data.

    Raises:
        ValueError: If `d > 2`, `epsilon <= 0`, too few nodes are requested
            or the dataset is empty.
    """
    if model.d > 2:
        raise ValueError(f"Cube quadrature supports d <= 2, got d={model.d}")
    if quad_points < MIN_QUAD_POINTS:
        raise ValueError(f"quad_points must be >= {MIN_QUAD_POINTS}, got {quad_points}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    vector = model.layout.check(theta)
    points = model.check_points(data.points)
    if len(points) == 0:
        raise ValueError("Cube MPF needs at least one observation")
    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    nodes, weights = 0.5 * epsilon * nodes, 0.5 * epsilon * weights
    grids = np.meshgrid(*([nodes] * model.d), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1)
    weight_grid = np.ones(len(offsets))
    for axis_weights in np.meshgrid(*([weights] * model.d), indexing="ij"):
        weight_grid *= axis_weights.ravel()
    shifted = (points[:, np.newaxis, :] + offsets[np.newaxis, :, :]).reshape(-1, model.d)
    shifted_energy = model.energies(shifted, vector).reshape(len(points), len(offsets))
    base = model.energies(points, vector)
    integrand = np.exp(0.5 * (base[:, np.newaxis] - shifted_energy))
    return float((integrand @ weight_grid).mean())
