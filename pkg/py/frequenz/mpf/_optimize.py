# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Deterministic minimizers: L-BFGS with a strong Wolfe line search, and plain GD."""

from __future__ import annotations  # required for constructor type hinting

import collections
import enum
import logging
import time
import typing
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from ._types import FloatArray, ObjectiveEval, ObjectiveFunction

_logger = logging.getLogger(__name__)

DEFAULT_MEMORY = 10
DEFAULT_MAX_ITERS = 2000
DEFAULT_GRAD_TOL = 1e-7
DEFAULT_F_TOL = 1e-12
DEFAULT_WOLFE_C1 = 1e-4
DEFAULT_WOLFE_C2 = 0.9
DEFAULT_LINE_SEARCH_EVALS = 40

_CURVATURE_EPS = 1e-12


@dataclass(frozen=True)
class OptimizerOptions:
    """Settings of `lbfgs_minimize`.

    Attributes:
        memory: Number of stored correction pairs.
        max_iters: Maximum number of accepted iterations.
        grad_tol: Stop when the gradient infinity-norm falls to this value.
        f_tol: Stop when the relative objective change falls to this value.
        wolfe_c1: Sufficient decrease constant.
        wolfe_c2: Curvature constant.
        max_line_search: Maximum objective evaluations per line search.
    """

    memory: int = DEFAULT_MEMORY
    max_iters: int = DEFAULT_MAX_ITERS
    grad_tol: float = DEFAULT_GRAD_TOL
    f_tol: float = DEFAULT_F_TOL
    wolfe_c1: float = DEFAULT_WOLFE_C1
    wolfe_c2: float = DEFAULT_WOLFE_C2
    max_line_search: int = DEFAULT_LINE_SEARCH_EVALS

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If a setting is out of range.
        """
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError(
                f"Wolfe constants must satisfy 0 < c1 < c2 < 1, "
                f"got c1={self.wolfe_c1}, c2={self.wolfe_c2}"
            )
        if self.grad_tol < 0 or self.f_tol < 0:
            raise ValueError("Tolerances must be non-negative")
        if self.max_line_search < 1:
            raise ValueError("max_line_search must be >= 1")


class OptimizeStatus(enum.Enum):
    """Why a minimizer stopped."""

    GRAD_TOL = "grad_tol"
    """The gradient norm reached the tolerance."""

    F_TOL = "f_tol"
    """The relative objective change reached the tolerance."""

    MAX_ITERS = "max_iters"
    """The iteration budget was used up."""

    LINE_SEARCH_FAILED = "line_search_failed"
    """No acceptable step was found; the best point so far is returned."""

    NON_FINITE = "non_finite"
    """The objective or its gradient became non-finite."""

    COMPLETED = "completed"
    """A fixed schedule ran to its end."""


@dataclass(frozen=True)
class TraceRecord:
    """One accepted iteration of a minimizer.

    Attributes:
        iteration: The iteration number, 0 for the starting point.
        value: The objective value.
        grad_norm: The gradient infinity-norm.
        elapsed_s: Wall-clock seconds since the minimizer started.
    """

    iteration: int
    value: float
    grad_norm: float
    elapsed_s: float


@dataclass
class OptimizeTrace:
    """The trajectory of a minimizer run.

    Attributes:
        records: One record per accepted iteration, starting point included.
        status: Why the run stopped.
        n_evaluations: Number of objective evaluations.
    """

    records: list[TraceRecord] = field(default_factory=list)
    status: OptimizeStatus = OptimizeStatus.MAX_ITERS
    n_evaluations: int = 0

    @property
    def n_iterations(self) -> int:
        """Return the number of accepted iterations.

        Returns:
            The iteration count, not counting the starting point.
        """
        return max(len(self.records) - 1, 0)


IterationCallback: typing.TypeAlias = typing.Callable[[int, FloatArray, ObjectiveEval], None]
"""Called after every accepted iteration with `(iteration, theta, evaluation)`."""


class _Clock:
    def __init__(self) -> None:
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start


def _is_finite(evaluation: ObjectiveEval) -> bool:
    return bool(np.isfinite(evaluation.value) and np.isfinite(evaluation.gradient).all())


def _grad_norm(evaluation: ObjectiveEval) -> float:
    if evaluation.gradient.size == 0:
        return 0.0
    return float(np.abs(evaluation.gradient).max())


def _two_loop(
    gradient: FloatArray, pairs: collections.deque[tuple[FloatArray, FloatArray, float]]
) -> FloatArray:
    """Apply the L-BFGS inverse Hessian approximation to a gradient."""
    q = gradient.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append(alpha)
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), alpha in zip(pairs, reversed(alphas)):
        beta = rho * np.dot(y, q)
        q += (alpha - beta) * s
    return q


def _cubic_step(
    lo: float, hi: float, f_lo: float, f_hi: float, d_lo: float, d_hi: float
) -> float:
    """Minimize the cubic interpolating two points, safeguarded towards bisection."""
    midpoint = 0.5 * (lo + hi)
    if lo == hi:
        return lo
    d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (lo - hi)
    radicand = d1 * d1 - d_lo * d_hi
    if radicand < 0 or not np.isfinite(radicand):
        return midpoint
    d2 = np.copysign(np.sqrt(radicand), hi - lo)
    denominator = d_hi - d_lo + 2.0 * d2
    if denominator == 0:
        return midpoint
    step = hi - (hi - lo) * (d_hi + d2 - d1) / denominator
    low, high = min(lo, hi), max(lo, hi)
    margin = 0.1 * (high - low)
    if not np.isfinite(step) or step < low + margin or step > high - margin:
        return midpoint
    return float(step)


@dataclass
class _LineSearch:
    """Strong Wolfe line search by bracketing and zoom."""

    objective: ObjectiveFunction
    theta: FloatArray
    start: ObjectiveEval
    direction: FloatArray
    options: OptimizerOptions
    n_evaluations: int = 0

    def _evaluate(self, alpha: float) -> tuple[ObjectiveEval, float]:
        self.n_evaluations += 1
        evaluation = self.objective(self.theta + alpha * self.direction)
        if not _is_finite(evaluation):
            return evaluation, float("nan")
        return evaluation, float(np.dot(evaluation.gradient, self.direction))

    def _armijo(self, alpha: float, value: float) -> bool:
        slope = float(np.dot(self.start.gradient, self.direction))
        return value <= self.start.value + self.options.wolfe_c1 * alpha * slope

    def _curvature(self, slope: float) -> bool:
        slope0 = float(np.dot(self.start.gradient, self.direction))
        return abs(slope) <= -self.options.wolfe_c2 * slope0

    def search(self, alpha: float) -> tuple[float, ObjectiveEval] | None:
        """Find a step satisfying the strong Wolfe conditions.

        Args:
            alpha: The initial trial step.

        Returns:
            The step and the evaluation there, or `None` if no decrease was found.
        """
        prev_alpha, prev_value = 0.0, self.start.value
        prev_slope = float(np.dot(self.start.gradient, self.direction))
        prev_eval = self.start
        while self.n_evaluations < self.options.max_line_search:
            evaluation, slope = self._evaluate(alpha)
            if not np.isfinite(slope):
                alpha = 0.5 * (prev_alpha + alpha)
                continue
            value = evaluation.value
            if not self._armijo(alpha, value) or (
                prev_alpha > 0 and value >= prev_value
            ):
                return self._zoom(
                    (prev_alpha, prev_value, prev_slope, prev_eval),
                    (alpha, value, slope, evaluation),
                )
            if self._curvature(slope):
                return alpha, evaluation
            if slope >= 0:
                return self._zoom(
                    (alpha, value, slope, evaluation),
                    (prev_alpha, prev_value, prev_slope, prev_eval),
                )
            prev_alpha, prev_value, prev_slope, prev_eval = alpha, value, slope, evaluation
            alpha *= 2.0
        return (prev_alpha, prev_eval) if prev_alpha > 0 else None

    def _zoom(
        self,
        low: tuple[float, float, float, ObjectiveEval],
        high: tuple[float, float, float, ObjectiveEval],
    ) -> tuple[float, ObjectiveEval] | None:
        while self.n_evaluations < self.options.max_line_search:
            alpha = _cubic_step(low[0], high[0], low[1], high[1], low[2], high[2])
            evaluation, slope = self._evaluate(alpha)
            if not np.isfinite(slope):
                high = (alpha, float("inf"), 0.0, evaluation)
                continue
            value = evaluation.value
            if not self._armijo(alpha, value) or value >= low[1]:
                high = (alpha, value, slope, evaluation)
                continue
            if self._curvature(slope):
                return alpha, evaluation
            if slope * (high[0] - low[0]) >= 0:
                high = low
            low = (alpha, value, slope, evaluation)
        # Bounded: fall back to the best sufficient-decrease point found.
        if low[0] > 0:
            return low[0], low[3]
        return None


def lbfgs_minimize(
    objective: ObjectiveFunction,
    theta0: npt.ArrayLike,
    options: OptimizerOptions | None = None,
    callback: IterationCallback | None = None,
) -> tuple[FloatArray, OptimizeTrace]:
    """Minimize a smooth objective with limited-memory BFGS.

    Args:
        objective: Returns the value and gradient at a parameter vector.
        theta0: The starting point.
        options: Optimizer settings; defaults when omitted.
        callback: Called after every accepted iteration.

    Returns:
        The final parameter vector and the run trace. Numerical trouble is
        reported through `OptimizeTrace.status`, never raised.
    """
    opts = options or OptimizerOptions()
    clock = _Clock()
    theta = np.array(theta0, dtype=np.float64)
    trace = OptimizeTrace()
    current = objective(theta)
    trace.n_evaluations = 1
    if not _is_finite(current):
        _logger.warning("Objective is not finite at the starting point")
        trace.status = OptimizeStatus.NON_FINITE
        return theta, trace
    trace.records.append(TraceRecord(0, current.value, _grad_norm(current), clock.elapsed()))
    if _grad_norm(current) <= opts.grad_tol:
        trace.status = OptimizeStatus.GRAD_TOL
        return theta, trace

    pairs: collections.deque[tuple[FloatArray, FloatArray, float]] = collections.deque(
        maxlen=opts.memory
    )
    trace.status = OptimizeStatus.MAX_ITERS
    for iteration in range(1, opts.max_iters + 1):
        direction = -_two_loop(current.gradient, pairs)
        if np.dot(direction, current.gradient) >= 0:
            pairs.clear()
            direction = -current.gradient
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / max(_grad_norm(current), 1e-300))
        search = _LineSearch(objective, theta, current, direction, opts)
        found = search.search(alpha0)
        trace.n_evaluations += search.n_evaluations
        if found is None:
            _logger.warning("L-BFGS line search failed at iteration %d", iteration)
            trace.status = OptimizeStatus.LINE_SEARCH_FAILED
            break
        alpha, evaluation = found
        step = alpha * direction
        change = evaluation.gradient - current.gradient
        curvature = float(np.dot(step, change))
        if curvature > _CURVATURE_EPS * float(np.dot(change, change)):
            pairs.append((step, change, 1.0 / curvature))
        previous = current
        theta = theta + step
        current = evaluation
        trace.records.append(
            TraceRecord(iteration, current.value, _grad_norm(current), clock.elapsed())
        )
        if callback is not None:
            callback(iteration, theta, current)
        if _grad_norm(current) <= opts.grad_tol:
            trace.status = OptimizeStatus.GRAD_TOL
            break
        scale = max(abs(previous.value), abs(current.value), 1.0)
        if abs(previous.value - current.value) <= opts.f_tol * scale:
            trace.status = OptimizeStatus.F_TOL
            break
    _logger.debug(
        "L-BFGS stopped after %d iterations (%s), value %.6g",
        trace.n_iterations,
        trace.status.value,
        current.value,
    )
    return theta, trace


RateSchedule: typing.TypeAlias = typing.Callable[[int], float]
"""Maps an update index to a learning rate."""


@dataclass(frozen=True)
class LinearSchedule:
    """A learning rate annealed linearly from `start` to `end` over `n_updates`.

    Attributes:
        start: The rate of the first update.
        end: The rate of the last update.
        n_updates: The number of updates.
    """

    start: float
    end: float
    n_updates: int

    def __call__(self, update: int) -> float:
        """Return the rate of one update.

        Args:
            update: The update index, from 0 to `n_updates - 1`.

        Returns:
            The learning rate.
        """
        if self.n_updates <= 1:
            return self.start
        fraction = update / (self.n_updates - 1)
        return self.start + (self.end - self.start) * fraction


def gd_minimize(
    objective: ObjectiveFunction,
    theta0: npt.ArrayLike,
    schedule: RateSchedule,
    n_updates: int,
    callback: IterationCallback | None = None,
) -> tuple[FloatArray, OptimizeTrace]:
    """Take fixed-schedule gradient steps `theta -= rate_t * gradient`.

    The objective is evaluated once per update; it may be stochastic. Record
    `k` of the trace holds the evaluation at the point reached after `k`
    updates, so the final point itself is not evaluated.

    Args:
        objective: Returns the value and gradient (or update direction).
        theta0: The starting point.
        schedule: The learning rate of every update.
        n_updates: The number of updates.
        callback: Called after every update.

    Returns:
        The final parameter vector and the run trace.
    """
    clock = _Clock()
    theta = np.array(theta0, dtype=np.float64)
    trace = OptimizeTrace(status=OptimizeStatus.COMPLETED)
    for update in range(n_updates):
        evaluation = objective(theta)
        trace.n_evaluations += 1
        if not np.isfinite(evaluation.gradient).all():
            _logger.warning("Non-finite gradient at update %d, aborting", update)
            trace.status = OptimizeStatus.NON_FINITE
            break
        trace.records.append(
            TraceRecord(update, evaluation.value, _grad_norm(evaluation), clock.elapsed())
        )
        theta = theta - schedule(update) * evaluation.gradient
        if callback is not None:
            callback(update + 1, theta, evaluation)
    return theta, trace


@dataclass
class Trajectory:
    """Parameter vectors visited by an iterative estimator.

    Attributes:
        thetas: The parameters, starting point first.
        elapsed_s: Wall-clock seconds since the start for every entry.
        values: An objective (or surrogate) value for every entry after the first.
    """

    thetas: list[FloatArray] = field(default_factory=list)
    elapsed_s: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    @property
    def final(self) -> FloatArray:
        """Return the last parameter vector.

        Returns:
            The most recent entry.

        Raises:
            IndexError: If the trajectory is empty.
        """
        return self.thetas[-1]
