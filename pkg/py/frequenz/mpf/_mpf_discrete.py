# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""The MPF objective for binary state models.

Probability flows out of every data state along single bit flips (or along a
randomly sampled connectivity); the objective is the initial flow rate and is
free of the partition function.
"""

from __future__ import annotations  # required for constructor type hinting

import abc
import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from ._dataset import DiscreteDataset
from ._exceptions import DimensionMismatchError, NonFiniteError, SupportError
from ._model import DiscreteEnergyModel
from ._optimize import IterationCallback, OptimizerOptions, OptimizeTrace, lbfgs_minimize
from ._oracle import enumerate_distribution
from ._types import (
    BitArray,
    ConnectivityMode,
    FloatArray,
    ObjectiveDiagnostics,
    ObjectiveEval,
)

_logger = logging.getLogger(__name__)

EXPONENT_CLAMP = 700.0
"""Largest exponent magnitude passed to `exp`; larger ones are clamped."""


@dataclass(frozen=True)
class Exponentials:
    """Clamped exponentials of a batch of exponents.

    Attributes:
        values: The exponentials, zero where masked out.
        max_exponent: The largest included exponent before clamping.
        clamped: How many included exponents were clamped.
    """

    values: FloatArray
    max_exponent: float
    clamped: int


def clamped_exp(exponents: FloatArray, mask: npt.NDArray[np.bool_]) -> Exponentials:
    """Exponentiate masked exponents, clamping at `EXPONENT_CLAMP`.

    Args:
        exponents: The exponents.
        mask: Which exponents are included; the others yield zero.

    Returns:
        The exponentials with clamp diagnostics.

    Raises:
        NonFiniteError: If an included exponent is not finite.
    """
    included = exponents[mask]
    if not np.isfinite(included).all():
        raise NonFiniteError("Non-finite energy difference in the MPF objective")
    clamped = int((np.abs(included) > EXPONENT_CLAMP).sum())
    limited = np.clip(exponents, -EXPONENT_CLAMP, EXPONENT_CLAMP)
    values = np.where(mask, np.exp(np.where(mask, limited, 0.0)), 0.0)
    return Exponentials(
        values, float(included.max()) if included.size else float("-inf"), clamped
    )


def _check_dimensions(model: DiscreteEnergyModel, theta: npt.ArrayLike, d: int) -> FloatArray:
    if d != model.d:
        raise DimensionMismatchError(
            f"Data of dimension {d} does not match model dimension {model.d}"
        )
    return model.layout.check(theta)


def _penalized(
    value: float, gradient: FloatArray, theta: FloatArray, l2: float
) -> tuple[float, FloatArray]:
    if l2 < 0:
        raise ValueError(f"The L2 penalty must be non-negative, got {l2}")
    if l2 == 0:
        return value, gradient
    return value + 0.5 * l2 * float(theta @ theta), gradient + l2 * theta


def mpf_objective(
    model: DiscreteEnergyModel,
    theta: npt.ArrayLike,
    data: DiscreteDataset,
    mode: ConnectivityMode = ConnectivityMode.STRICT,
    *,
    complement_flip: bool = False,
    l2: float = 0.0,
) -> ObjectiveEval:
    """Evaluate the MPF objective under single bit flip connectivity.

    The value is `(1/W) sum_j w_j sum_i exp((E_j - E_i) / 2)` over the data
    states `j` and their bit flip neighbors `i`, and the gradient is
    `(1/2W) sum_j w_j sum_i exp((E_j - E_i) / 2) (dE_j - dE_i)`.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        data: The weighted data states.
        mode: Whether neighbors that are data states are left out.
        complement_flip: Also connect every data state to its complement (for
            `d > 1`, where the complement is not a single flip).
        l2: Weight of an optional `0.5 * l2 * |theta|^2` penalty.

    Returns:
        The value, gradient and diagnostics.

    Raises:
        DimensionMismatchError: If dimensions disagree.
        NonFiniteError: If an energy is not finite.

    Example:
        ```python
        import numpy as np
        from frequenz.mpf import DiscreteDataset, IsingModel, Support, mpf_objective

        model = IsingModel(Support.full(1))
        data = DiscreteDataset.from_samples([[0]])
        result = mpf_objective(model, np.array([2.0]), data)
        assert abs(result.value - np.exp(-1.0)) < 1e-12
        ```
    """
    vector = _check_dimensions(model, theta, data.d)
    if data.n_states == 0:
        value, gradient = _penalized(0.0, np.zeros(model.layout.size), vector, l2)
        return ObjectiveEval(value, gradient)

    weights = data.weights / data.total_weight
    exponents = -0.5 * model.flip_deltas(data.states, vector)
    if mode is ConnectivityMode.STRICT:
        mask = ~data.flip_in_data
    else:
        mask = np.ones(exponents.shape, dtype=bool)
    flips = clamped_exp(exponents, mask)
    weighted = flips.values * weights[:, np.newaxis]
    value = float(weighted.sum())
    gradient = 0.5 * model.flip_grad_contraction(data.states, weighted, vector)
    max_exponent, clamped, count = flips.max_exponent, flips.clamped, int(mask.sum())

    if complement_flip and data.d > 1:
        complements = (1 - data.states).astype(np.int8)
        comp_mask = np.ones(data.n_states, dtype=bool)
        if mode is ConnectivityMode.STRICT:
            comp_mask = ~data.complement_in_data
        energies = model.energies(data.states, vector)
        comp_exponents = 0.5 * (energies - model.energies(complements, vector))
        comps = clamped_exp(comp_exponents, comp_mask)
        comp_weighted = comps.values * weights
        value += float(comp_weighted.sum())
        gradient += 0.5 * comp_weighted @ (
            model.param_grads(data.states, vector) - model.param_grads(complements, vector)
        )
        max_exponent = max(max_exponent, comps.max_exponent)
        clamped += comps.clamped
        count += int(comp_mask.sum())

    if clamped:
        _logger.warning(
            "Clamped %d of %d MPF exponents at +/-%g", clamped, count, EXPONENT_CLAMP
        )
    value, gradient = _penalized(value, gradient, vector, l2)
    return ObjectiveEval(
        value,
        gradient,
        ObjectiveDiagnostics(
            max_exponent=max_exponent, term_count=count, clamped_terms=clamped
        ),
    )


class SampledConnectivity(abc.ABC):
    """A random connectivity proposing, for every state, candidate neighbors.

    Each candidate `i` of a state `j` is connected with probability `g_ij` and
    carries the reverse probability `g_ji`. Realized connections are drawn
    from one RNG stream per data state derived from `(seed, state index)`.
    """

    seed: int

    @abc.abstractmethod
    def propose(self, state: BitArray) -> tuple[BitArray, FloatArray, FloatArray]:
        """List the candidate neighbors of a state.

        Args:
            state: The state `j`.

        Returns:
            The candidate states (one per row, all different from `j`), their
            connection probabilities `g_ij` and reverse probabilities `g_ji`.
        """

    @abc.abstractmethod
    def with_seed(self, seed: int) -> SampledConnectivity:
        """Return the same connectivity with another seed.

        Args:
            seed: The new seed.

        Returns:
            A copy using `seed`.
        """


@dataclass(frozen=True)
class BitFlipConnectivity(SampledConnectivity):
    """Connects a state to each single bit flip with a fixed probability.

    Attributes:
        forward: Probability `g_ij` of connecting `j` to a flip `i`.
        reverse: Probability `g_ji` of the reverse connection; defaults to
            `forward`.
        seed: Seed of the connection draws.
    """

    forward: float = 1.0
    reverse: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the probabilities.

        Raises:
            SupportError: If a probability is outside `(0, 1]`.
        """
        for name, prob in (("forward", self.forward), ("reverse", self.reverse_probability)):
            if not 0.0 < prob <= 1.0:
                raise SupportError(f"{name} connection probability {prob} not in (0, 1]")

    @property
    def reverse_probability(self) -> float:
        """Return the effective reverse probability.

        Returns:
            `reverse`, or `forward` when unset.
        """
        return self.forward if self.reverse is None else self.reverse

    def propose(self, state: BitArray) -> tuple[BitArray, FloatArray, FloatArray]:
        """List every single bit flip of a state.

        Args:
            state: The state `j`.

        Returns:
            The `d` flipped states with constant forward and reverse probabilities.
        """
        d = len(state)
        candidates = np.repeat(state[np.newaxis, :], d, axis=0)
        diagonal = np.arange(d)
        candidates[diagonal, diagonal] = 1 - candidates[diagonal, diagonal]
        return (
            candidates.astype(np.int8),
            np.full(d, self.forward),
            np.full(d, self.reverse_probability),
        )

    def with_seed(self, seed: int) -> BitFlipConnectivity:
        """Return the same connectivity with another seed.

        Args:
            seed: The new seed.

        Returns:
            A copy using `seed`.
        """
        return dataclasses.replace(self, seed=seed)


def _checked_proposal(
    conn: SampledConnectivity, state: BitArray
) -> tuple[BitArray, FloatArray, FloatArray]:
    candidates, forward, reverse = conn.propose(state)
    if (forward <= 0).any() or (forward > 1).any() or (reverse <= 0).any():
        raise SupportError(
            "Sampled connectivity proposed probabilities outside (0, 1] "
            "or a non-positive reverse probability"
        )
    if (candidates == state).all(axis=1).any():
        raise SupportError("Sampled connectivity proposed a state's own self")
    return candidates, forward, reverse


def _flow_terms(
    model: DiscreteEnergyModel,
    theta: FloatArray,
    state: BitArray,
    candidates: BitArray,
    scale: FloatArray,
) -> tuple[float, FloatArray, float, int]:
    """Sum `scale * exp((E_j - E_i) / 2)` over candidates, with its gradient."""
    energy = model.energies(state[np.newaxis, :], theta)[0]
    exponents = 0.5 * (energy - model.energies(candidates, theta))
    flows = clamped_exp(exponents, np.ones(len(candidates), dtype=bool))
    terms = scale * flows.values
    diff = model.param_grads(state[np.newaxis, :], theta)[0] - model.param_grads(
        candidates, theta
    )
    return float(terms.sum()), 0.5 * terms @ diff, flows.max_exponent, flows.clamped


def _sampled_flow(
    model: DiscreteEnergyModel,
    theta: npt.ArrayLike,
    data: DiscreteDataset,
    conn: SampledConnectivity,
    *,
    realize: bool,
) -> ObjectiveEval:
    vector = _check_dimensions(model, theta, data.d)
    value = 0.0
    gradient = np.zeros(model.layout.size)
    max_exponent, clamped, count = float("-inf"), 0, 0
    for index, (state, weight) in enumerate(zip(data.states, data.weights)):
        candidates, forward, reverse = _checked_proposal(conn, state)
        if realize:
            rng = np.random.default_rng([conn.seed, index])
            keep = rng.random(len(candidates)) < forward
            candidates = candidates[keep]
            scale = np.sqrt(reverse[keep] / forward[keep])
        else:
            scale = np.sqrt(reverse * forward)
        if len(candidates) == 0:
            continue
        part_value, part_grad, part_max, part_clamped = _flow_terms(
            model, vector, state, candidates, scale
        )
        value += weight * part_value
        gradient += weight * part_grad
        max_exponent = max(max_exponent, part_max)
        clamped += part_clamped
        count += len(candidates)
    if clamped:
        _logger.warning("Clamped %d of %d sampled MPF exponents", clamped, count)
    total = data.total_weight if data.n_states else 1.0
    return ObjectiveEval(
        value / total,
        gradient / total,
        ObjectiveDiagnostics(max_exponent=max_exponent, term_count=count, clamped_terms=clamped),
    )


def mpf_objective_sampled(
    model: DiscreteEnergyModel,
    theta: npt.ArrayLike,
    data: DiscreteDataset,
    conn: SampledConnectivity,
) -> ObjectiveEval:
    """Estimate the MPF objective under a randomly sampled connectivity.

    Every realized connection `j -> i` contributes
    `sqrt(g_ji / g_ij) exp((E_j - E_i) / 2)`, which makes the result an
    unbiased estimate of `expected_sampled_objective`. The draws depend only
    on `conn.seed` and the data state order.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        data: The weighted data states.
        conn: The sampled connectivity.

    Returns:
        The estimated value, gradient and diagnostics.
    """
    return _sampled_flow(model, theta, data, conn, realize=True)


def expected_sampled_objective(
    model: DiscreteEnergyModel,
    theta: npt.ArrayLike,
    data: DiscreteDataset,
    conn: SampledConnectivity,
) -> ObjectiveEval:
    """Evaluate the sampled connectivity objective averaged over all draws.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        data: The weighted data states.
        conn: The sampled connectivity.

    Returns:
        `(1/W) sum_j w_j sum_i sqrt(g_ij g_ji) exp((E_j - E_i) / 2)` and its gradient.
    """
    return _sampled_flow(model, theta, data, conn, realize=False)


def stationarity_residual(model: DiscreteEnergyModel, theta: npt.ArrayLike) -> float:
    """Measure how far a model's own distribution is from an MPF stationary point.

    Args:
        model: The energy model.
        theta: The flat parameter vector.

    Returns:
        The gradient infinity-norm of the all-neighbors MPF objective with the
        exact model distribution as weighted data.

    Raises:
        EnumerationLimitError: If the model is too large to enumerate.
    """
    vector = model.layout.check(theta)
    dist = enumerate_distribution(model, vector)
    data = dist.as_dataset()
    gradient = mpf_objective(model, vector, data, ConnectivityMode.ALL_NEIGHBORS).gradient
    return float(np.abs(gradient).max()) if gradient.size else 0.0


def fit_mpf(
    model: DiscreteEnergyModel,
    data: DiscreteDataset,
    mode: ConnectivityMode = ConnectivityMode.STRICT,
    *,
    theta0: npt.ArrayLike | None = None,
    options: OptimizerOptions | None = None,
    complement_flip: bool = False,
    l2: float = 0.0,
    callback: IterationCallback | None = None,
) -> tuple[FloatArray, OptimizeTrace]:
    """Estimate parameters by minimizing the MPF objective with L-BFGS.

    Args:
        model: The energy model.
        data: The weighted data states.
        mode: The connectivity mode.
        theta0: The starting point; zeros when omitted.
        options: L-BFGS settings.
        complement_flip: Also connect data states to their complements.
        l2: Weight of an optional L2 penalty.
        callback: Called after every accepted iteration.

    Returns:
        The estimate and the optimizer trace.
    """
    start = np.zeros(model.layout.size) if theta0 is None else model.layout.check(theta0)
    _logger.info(
        "Fitting %d parameters by MPF (%s) on %d distinct states",
        model.layout.size,
        mode.value,
        data.n_states,
    )
    return lbfgs_minimize(
        lambda theta: mpf_objective(
            model, theta, data, mode, complement_flip=complement_flip, l2=l2
        ),
        start,
        options,
        callback,
    )
