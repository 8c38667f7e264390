# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Named numerical checks of the MPF objective against the exact oracle."""

from __future__ import annotations  # required for constructor type hinting

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from ._dataset import DiscreteDataset, state_index
from ._model import IsingModel, random_full_glass
from ._mpf_discrete import mpf_objective, stationarity_residual
from ._oracle import (
    enumerate_distribution,
    exact_kl,
    finite_diff_grad,
    full_gamma,
    propagate,
)
from ._samplers import exact_sample
from ._types import FloatArray

_logger = logging.getLogger(__name__)

CHECK_SIGMA2 = 1.0
CHECK_SAMPLES = 50
CHECK_SEGMENTS = 100
PROPAGATION_LIMIT = 6
"""Largest dimension for which the fixed point is also reached by propagation."""

_FD_STEP = 1e-5
_TAYLOR_TIME = 1e-5
_CURVATURE_STEP = 1e-2
_PROPAGATION_TIME = 1e3


class CheckName(enum.Enum):
    """The available checks."""

    GRADIENT = "gradient"
    """Analytic MPF gradient against central finite differences."""

    TAYLOR = "taylor"
    """Initial slope of `KL(p0 || p(t))` against the MPF objective."""

    CONVEXITY = "convexity"
    """Midpoint convexity and non-negative curvature along random directions."""

    DETAILED_BALANCE = "detailed-balance"
    """Detailed balance and fixed point of the full rate matrix."""

    STATIONARITY = "stationarity"
    """Vanishing MPF gradient with the model distribution as data."""


@dataclass(frozen=True)
class Measurement:
    """One measured residual and its threshold.

    Attributes:
        name: What was measured.
        value: The residual.
        threshold: The largest acceptable residual.
    """

    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        """Whether the residual is within the threshold."""
        return bool(self.value <= self.threshold)


@dataclass(frozen=True)
class CheckResult:
    """The outcome of one check.

    Attributes:
        check: The check that ran.
        d: The dimension of the instance.
        seed: The seed of the instance.
        measurements: The measured residuals.
    """

    check: CheckName
    d: int
    seed: int
    measurements: tuple[Measurement, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        """Whether every measurement passed."""
        return all(m.passed for m in self.measurements)


@dataclass(frozen=True, eq=False)
class _Instance:
    model: IsingModel
    theta: FloatArray
    data: DiscreteDataset


def _instance(d: int, seed: int) -> _Instance:
    coupling = random_full_glass(d, CHECK_SIGMA2, seed)
    model = IsingModel(coupling.support)
    return _Instance(model, model.parameters(coupling), exact_sample(coupling, CHECK_SAMPLES, seed))


def _relative(difference: float, scale: float) -> float:
    return difference / max(scale, np.finfo(np.float64).tiny)


def _check_gradient(instance: _Instance) -> list[Measurement]:
    def objective(theta: FloatArray) -> float:
        return mpf_objective(instance.model, theta, instance.data).value

    analytic = mpf_objective(instance.model, instance.theta, instance.data).gradient
    numeric = finite_diff_grad(objective, instance.theta, _FD_STEP)
    error = float(np.abs(analytic - numeric).max())
    return [
        Measurement(
            "gradient relative error",
            _relative(error, float(np.abs(analytic).max())),
            1e-6,
        )
    ]


def _check_taylor(instance: _Instance) -> list[Measurement]:
    d = instance.model.d
    p0 = np.zeros(2**d)
    p0[state_index(instance.data.states)] = instance.data.probabilities()
    gamma = full_gamma(instance.model, instance.theta)
    # Richardson extrapolation of KL(t) / t removes the first order error.
    slope_full = exact_kl(p0, propagate(p0, gamma, _TAYLOR_TIME)) / _TAYLOR_TIME
    half = 0.5 * _TAYLOR_TIME
    slope_half = exact_kl(p0, propagate(p0, gamma, half)) / half
    slope = 2.0 * slope_half - slope_full
    value = mpf_objective(instance.model, instance.theta, instance.data).value
    return [
        Measurement("KL slope relative mismatch", _relative(abs(slope - value), value), 1e-5),
        Measurement(
            "rate matrix outflow relative mismatch",
            _relative(abs(gamma.data_outflow(instance.data) - value), value),
            1e-12,
        ),
    ]


def _check_convexity(instance: _Instance, seed: int) -> list[Measurement]:
    rng = np.random.default_rng(seed)
    size = instance.model.layout.size

    def value(theta: FloatArray) -> float:
        return mpf_objective(instance.model, theta, instance.data).value

    worst_midpoint = 0.0
    worst_curvature = 0.0
    for _ in range(CHECK_SEGMENTS):
        first = instance.theta + 0.5 * rng.normal(size=size)
        second = instance.theta + 0.5 * rng.normal(size=size)
        gap = value(0.5 * (first + second)) - 0.5 * (value(first) + value(second))
        worst_midpoint = max(worst_midpoint, gap)
        direction = rng.normal(size=size)
        direction /= np.linalg.norm(direction)
        step = _CURVATURE_STEP * direction
        curvature = (value(first + step) - 2.0 * value(first) + value(first - step)) / (
            _CURVATURE_STEP**2
        )
        worst_curvature = max(worst_curvature, -curvature)
    return [
        Measurement("midpoint convexity violation", worst_midpoint, 1e-10),
        Measurement("negative directional curvature", worst_curvature, 1e-8),
    ]


def _check_detailed_balance(instance: _Instance) -> list[Measurement]:
    gamma = full_gamma(instance.model, instance.theta)
    probs = enumerate_distribution(instance.model, instance.theta).probs
    measurements = [
        Measurement("detailed balance residual", gamma.detailed_balance_residual(probs), 1e-12),
        Measurement("fixed point residual", gamma.stationarity_residual(probs), 1e-10),
        Measurement(
            "column sum residual", float(np.abs(gamma.column_sums()).max()), 1e-10
        ),
    ]
    if instance.model.d <= PROPAGATION_LIMIT:
        uniform = np.full(2**instance.model.d, 2.0**-instance.model.d)
        relaxed = propagate(uniform, gamma, _PROPAGATION_TIME)
        measurements.append(
            Measurement(
                "propagated distance to fixed point", float(np.abs(relaxed - probs).max()), 1e-8
            )
        )
    return measurements


def _check_stationarity(instance: _Instance) -> list[Measurement]:
    return [
        Measurement(
            "MPF gradient at the model distribution",
            stationarity_residual(instance.model, instance.theta),
            1e-8,
        )
    ]


def run_check(name: CheckName, d: int, seed: int = 0) -> CheckResult:
    """Run a named check on a seeded fully connected glass with 50 exact samples.

    Args:
        name: The check.
        d: The dimension, at most 14 for the rate matrix checks.
        seed: Seed of the glass, the samples and the random directions.

    Returns:
        The measured residuals and thresholds.

    Raises:
        ValueError: If `d < 1`.
    """
    if d < 1:
        raise ValueError(f"The dimension must be >= 1, got {d}")
    instance = _instance(d, seed)
    match name:
        case CheckName.GRADIENT:
            measurements = _check_gradient(instance)
        case CheckName.TAYLOR:
            measurements = _check_taylor(instance)
        case CheckName.CONVEXITY:
            measurements = _check_convexity(instance, seed)
        case CheckName.DETAILED_BALANCE:
            measurements = _check_detailed_balance(instance)
        case CheckName.STATIONARITY:
            measurements = _check_stationarity(instance)
    result = CheckResult(name, d, seed, tuple(measurements))
    for m in result.measurements:
        _logger.info(
            "%s: %.3e (threshold %.1e) %s",
            m.name,
            m.value,
            m.threshold,
            "ok" if m.passed else "FAIL",
        )
    return result
