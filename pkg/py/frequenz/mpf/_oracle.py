# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Brute-force ground truth for small systems.

Everything here enumerates all `2^d` states and is gated: enumeration to
`d <= 20`, the full transition rate matrix to `d <= 14`, explicit sampler
kernels to `d <= 12`.
"""

from __future__ import annotations  # required for constructor type hinting

import functools
import logging
import typing
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import sparse, special
from scipy.sparse import linalg as sparse_linalg

from ._dataset import (
    ENUMERATION_LIMIT,
    ContinuousDataset,
    DiscreteDataset,
    enumerate_states,
)
from ._exceptions import DimensionMismatchError, EnumerationLimitError, SupportError
from ._model import (
    ContinuousEnergyModel,
    DiscreteEnergyModel,
    IcaModel,
    IsingModel,
    on_probability,
)
from ._optimize import OptimizerOptions, OptimizeTrace, lbfgs_minimize
from ._samplers import ChainConfig, gibbs_sample
from ._types import BitArray, FloatArray, ObjectiveEval

_logger = logging.getLogger(__name__)

FULL_GAMMA_LIMIT = 14
"""Largest dimension for which the full transition rate matrix is built."""

KERNEL_LIMIT = 12
"""Largest dimension for which an explicit sampler kernel is built."""

DEFAULT_CORRELATION_BUDGET = 200_000
"""Gibbs sweeps used for model correlations above the enumeration limit."""

_ROUNDOFF = 1e-12
_CORRELATION_CHAINS = 100


def _check_enumerable(d: int, limit: int = ENUMERATION_LIMIT) -> None:
    if d > limit:
        raise EnumerationLimitError(f"Dimension {d} exceeds the exact oracle limit of {limit}")


@dataclass(frozen=True, eq=False)
class EnumeratedDistribution:
    """The exact Boltzmann distribution of a discrete model.

    Attributes:
        d: The dimension.
        probs: The probability of every enumerated state (see `enumerate_states`).
        log_z: The log partition function.
    """

    d: int
    probs: FloatArray
    log_z: float

    @functools.cached_property
    def states(self) -> BitArray:
        """All states in enumeration order."""
        return enumerate_states(self.d)

    def as_dataset(self) -> DiscreteDataset:
        """Return the distribution as a weighted full-support dataset.

        Returns:
            A dataset weighting every state with positive probability.
        """
        return DiscreteDataset.from_probabilities(self.probs, self.d)

    def moments(self) -> tuple[FloatArray, FloatArray]:
        """Compute the exact first and second moments.

        Returns:
            The means `<x_i>` and the matrix `<x_i x_j>`.
        """
        x = self.states.astype(np.float64)
        return self.probs @ x, (x * self.probs[:, np.newaxis]).T @ x

    def correlations(self) -> FloatArray:
        """Compute the exact connected correlation matrix.

        Returns:
            `<x_i x_j> - <x_i><x_j>`, variances on the diagonal.
        """
        means, second = self.moments()
        return second - np.outer(means, means)


def enumerate_distribution(
    model: DiscreteEnergyModel, theta: npt.ArrayLike
) -> EnumeratedDistribution:
    """Compute the exact distribution `exp(-E) / Z` of a discrete model.

    Args:
        model: The energy model.
        theta: The flat parameter vector.

    Returns:
        The normalized distribution and its log partition function.

    Raises:
        EnumerationLimitError: If `d` exceeds the enumeration limit.
    """
    _check_enumerable(model.d)
    states = enumerate_states(model.d)
    neg_energies = -model.energies(states, model.layout.check(theta))
    log_z = float(special.logsumexp(neg_energies))
    return EnumeratedDistribution(model.d, np.exp(neg_energies - log_z), log_z)


@dataclass(frozen=True, eq=False)
class FullGamma:
    """The complete transition rate matrix of the single bit flip dynamics.

    Column `j` holds the rates out of state `j`; columns sum to zero.

    Attributes:
        d: The dimension.
        matrix: The sparse `2^d x 2^d` rate matrix in CSC format.
    """

    d: int
    matrix: sparse.csc_matrix

    def column_sums(self) -> FloatArray:
        """Return the sum of every column.

        Returns:
            The column sums, zero up to round-off.
        """
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def detailed_balance_residual(self, probs: npt.ArrayLike) -> float:
        """Measure the largest violation of `G_ji p_i = G_ij p_j`.

        Args:
            probs: A probability vector over the enumerated states.

        Returns:
            The maximum absolute residual over all pairs.
        """
        flows = self.matrix @ sparse.diags(np.asarray(probs, dtype=np.float64))
        residual = abs(flows - flows.T)
        return float(residual.max()) if residual.nnz else 0.0

    def stationarity_residual(self, probs: npt.ArrayLike) -> float:
        """Return the infinity norm of `G p`.

        Args:
            probs: A probability vector over the enumerated states.

        Returns:
            The largest rate of change of any state probability.
        """
        return float(np.abs(self.matrix @ np.asarray(probs, dtype=np.float64)).max())

    def data_outflow(self, data: DiscreteDataset) -> float:
        """Sum the rates from data states to non-data states.

        Args:
            data: The weighted data states.

        Returns:
            `sum_{j in D} p_j sum_{i not in D} G_ij`.

        Raises:
            DimensionMismatchError: If the data dimension differs.
        """
        if data.d != self.d:
            raise DimensionMismatchError(f"Data dimension {data.d} != {self.d}")
        codes = (data.states.astype(np.int64) << np.arange(self.d)).sum(axis=1)
        in_data = np.zeros(2**self.d, dtype=bool)
        in_data[codes] = True
        block = self.matrix[:, codes][np.flatnonzero(~in_data), :]
        return float(np.asarray(block.sum(axis=0)).ravel() @ data.probabilities())


def full_gamma(
    model: DiscreteEnergyModel, theta: npt.ArrayLike, *, complement_flip: bool = False
) -> FullGamma:
    """Build the transition rate matrix `G_ij = exp((E_j - E_i) / 2)` on connected pairs.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        complement_flip: Also connect every state to its complement.

    Returns:
        The rate matrix with diagonal set so that columns sum to zero.

    Raises:
        EnumerationLimitError: If `d` exceeds `FULL_GAMMA_LIMIT`.
    """
    _check_enumerable(model.d, FULL_GAMMA_LIMIT)
    n = 2**model.d
    energies = model.energies(enumerate_states(model.d), model.layout.check(theta))
    columns = np.arange(n, dtype=np.int64)
    masks = [1 << k for k in range(model.d)]
    if complement_flip and model.d > 1:
        masks.append(n - 1)
    rows = np.concatenate([columns ^ mask for mask in masks])
    cols = np.tile(columns, len(masks))
    rates = np.exp(0.5 * (energies[cols] - energies[rows]))
    off_diagonal = sparse.coo_matrix((rates, (rows, cols)), shape=(n, n)).tocsc()
    diagonal = -np.asarray(off_diagonal.sum(axis=0)).ravel()
    return FullGamma(model.d, (off_diagonal + sparse.diags(diagonal)).tocsc())


def propagate(p0: npt.ArrayLike, gamma: FullGamma, t: float) -> FloatArray:
    """Integrate the master equation `dp/dt = G p` for time `t`.

    Args:
        p0: The initial probability vector.
        gamma: The transition rate matrix.
        t: The elapsed time, non-negative.

    Returns:
        `exp(t G) p0`, with round-off of the total and of tiny negative entries
        absorbed.

    Raises:
        ValueError: If `t` is negative or `p0` is not a probability vector.
    """
    start = np.asarray(p0, dtype=np.float64)
    if start.shape != (2**gamma.d,):
        raise DimensionMismatchError(f"Expected {2**gamma.d} probabilities")
    if t < 0:
        raise ValueError(f"Propagation time must be non-negative, got {t}")
    if (start < 0).any() or abs(start.sum() - 1.0) > 1e-10:
        raise ValueError("The initial vector must be a probability distribution")
    if t == 0:
        return start.copy()
    result = np.asarray(sparse_linalg.expm_multiply(t * gamma.matrix, start))
    result[(result < 0) & (result > -_ROUNDOFF)] = 0.0
    return result / result.sum()


def exact_kl(p: npt.ArrayLike, q: npt.ArrayLike) -> float:
    """Compute `sum_i p_i log(p_i / q_i)` with `0 log 0 = 0`.

    Args:
        p: The first distribution.
        q: The second distribution.

    Returns:
        The Kullback-Leibler divergence.

    Raises:
        SupportError: If `q_i = 0` where `p_i > 0`.
        DimensionMismatchError: If the lengths differ.
    """
    first = np.asarray(p, dtype=np.float64)
    second = np.asarray(q, dtype=np.float64)
    if first.shape != second.shape:
        raise DimensionMismatchError(f"Shapes {first.shape} and {second.shape} differ")
    if ((first > 0) & (second <= 0)).any():
        raise SupportError("The second distribution misses support of the first")
    return float(special.rel_entr(first, second).sum())


def exact_nll(
    model: DiscreteEnergyModel, theta: npt.ArrayLike, data: DiscreteDataset
) -> ObjectiveEval:
    """Evaluate the exact average negative log-likelihood of a discrete model.

    Args:
        model: The energy model.
        theta: The flat parameter vector.
        data: The weighted data states.

    Returns:
        `<E>_data + log Z` and its gradient `<dE>_data - <dE>_model`.
    """
    vector = model.layout.check(theta)
    dist = enumerate_distribution(model, vector)
    probs = data.probabilities()
    value = float(probs @ model.energies(data.states, vector)) + dist.log_z
    data_moments = probs @ model.param_grads(data.states, vector)
    model_moments = dist.probs @ model.param_grads(dist.states, vector)
    return ObjectiveEval(value, data_moments - model_moments)


def ica_log_likelihood(filters: npt.ArrayLike, points: npt.ArrayLike) -> tuple[float, FloatArray]:
    """Compute the exact average log-likelihood of a Laplace-prior ICA model.

    Args:
        filters: The square filter matrix `J`.
        points: One observation per row.

    Returns:
        `mean(-sum_k |J_k x|) + log|det J| - d log 2` in nats per sample and
        its gradient with respect to `J` (same shape as `J`); `-inf` and a
        NaN gradient for singular `J`.
    """
    matrix = np.asarray(filters, dtype=np.float64)
    data = np.asarray(points, dtype=np.float64)
    d = matrix.shape[0]
    projections = data @ matrix.T
    sign, log_det = np.linalg.slogdet(matrix)
    if sign == 0:
        return float("-inf"), np.full(matrix.shape, np.nan)
    value = float(-np.abs(projections).sum(axis=1).mean() + log_det - d * np.log(2.0))
    gradient = -(np.sign(projections).T @ data) / len(data) + np.linalg.inv(matrix).T
    return value, gradient


@typing.overload
def exact_ml_fit(
    data: DiscreteDataset,
    model: DiscreteEnergyModel,
    theta0: npt.ArrayLike | None = None,
    options: OptimizerOptions | None = None,
) -> tuple[FloatArray, OptimizeTrace]: ...


@typing.overload
def exact_ml_fit(
    data: ContinuousDataset,
    model: IcaModel,
    theta0: npt.ArrayLike | None = None,
    options: OptimizerOptions | None = None,
) -> tuple[FloatArray, OptimizeTrace]: ...


def exact_ml_fit(
    data: DiscreteDataset | ContinuousDataset,
    model: DiscreteEnergyModel | ContinuousEnergyModel,
    theta0: npt.ArrayLike | None = None,
    options: OptimizerOptions | None = None,
) -> tuple[FloatArray, OptimizeTrace]:
    """Fit a model by exact maximum likelihood with L-BFGS.

    Discrete models use the enumerated partition function; the ICA family
    uses its closed-form normalizer.

    Args:
        data: The data, discrete or continuous to match the model.
        model: The model family.
        theta0: The starting point; zeros (identity filters for ICA) when omitted.
        options: L-BFGS settings.

    Returns:
        The estimate and the optimizer trace.

    Raises:
        TypeError: If the data kind and model family do not match.
    """
    if isinstance(model, DiscreteEnergyModel) and isinstance(data, DiscreteDataset):
        start = np.zeros(model.layout.size) if theta0 is None else model.layout.check(theta0)
        return lbfgs_minimize(lambda theta: exact_nll(model, theta, data), start, options)
    if isinstance(model, IcaModel) and isinstance(data, ContinuousDataset):
        if theta0 is None:
            start = np.eye(model.d).ravel()
        else:
            start = model.layout.check(theta0)

        def negative_log_likelihood(theta: FloatArray) -> ObjectiveEval:
            value, gradient = ica_log_likelihood(model.filters(theta), data.points)
            return ObjectiveEval(-value, -gradient.ravel())

        return lbfgs_minimize(negative_log_likelihood, start, options)
    raise TypeError(
        f"No exact likelihood for {type(model).__name__} with {type(data).__name__}"
    )


def finite_diff_grad(
    objective: typing.Callable[[FloatArray], float | ObjectiveEval],
    theta: npt.ArrayLike,
    h: float = 1e-5,
) -> FloatArray:
    """Approximate a gradient by central differences.

    Args:
        objective: Returns a value (or an `ObjectiveEval`) at a parameter vector.
        theta: The point.
        h: The step, positive.

    Returns:
        `(f(theta + h e_k) - f(theta - h e_k)) / 2h` for every coordinate `k`.

    Raises:
        ValueError: If `h` is not positive.
    """
    if h <= 0:
        raise ValueError(f"Finite difference step must be positive, got {h}")

    def value_at(point: FloatArray) -> float:
        result = objective(point)
        return result.value if isinstance(result, ObjectiveEval) else float(result)

    vector = np.asarray(theta, dtype=np.float64)
    gradient = np.empty_like(vector)
    for k in range(vector.size):
        step = np.zeros_like(vector)
        step[k] = h
        gradient[k] = (value_at(vector + step) - value_at(vector - step)) / (2.0 * h)
    return gradient


def model_pair_correlations(
    model: IsingModel,
    theta: npt.ArrayLike,
    budget: int = DEFAULT_CORRELATION_BUDGET,
    seed: int = 0,
) -> FloatArray:
    """Compute the connected pair correlations of a spin glass.

    Enumeration is exact for `d <= 20`; larger models fall back to Gibbs
    sampling: `budget` kept samples from up to 100 chains run in lock step.

    Args:
        model: The Ising model family.
        theta: The flat parameter vector.
        budget: Number of Gibbs samples when sampling.
        seed: Seed of the Gibbs chain.

    Returns:
        The `d x d` matrix `<x_i x_j> - <x_i><x_j>`, variances on the diagonal.
    """
    if model.d <= ENUMERATION_LIMIT:
        return enumerate_distribution(model, theta).correlations()
    _logger.info("Estimating correlations of d=%d by %d Gibbs samples", model.d, budget)
    chains = min(budget, _CORRELATION_CHAINS) or 1
    data = gibbs_sample(
        model.coupling(theta), budget, ChainConfig(thin=1, seed=seed, n_chains=chains)
    )
    means, second = data.moments()
    return second - np.outer(means, means)


def gibbs_kernel(model: IsingModel, theta: npt.ArrayLike) -> FloatArray:
    """Build the transition matrix of one ascending heat-bath Gibbs sweep.

    Args:
        model: The Ising model family.
        theta: The flat parameter vector.

    Returns:
        The column-stochastic `2^d x 2^d` matrix mapping a distribution over
        enumerated states to the distribution after one sweep.

    Raises:
        EnumerationLimitError: If `d` exceeds `KERNEL_LIMIT`.
    """
    _check_enumerable(model.d, KERNEL_LIMIT)
    n = 2**model.d
    states = enumerate_states(model.d)
    columns = np.arange(n, dtype=np.int64)
    p_on = on_probability(model.local_fields(states, model.layout.check(theta)))
    kernel = np.eye(n)
    for k in range(model.d):
        off_index = columns & ~(1 << k)
        on_index = columns | (1 << k)
        step = sparse.coo_matrix(
            (
                np.concatenate([1.0 - p_on[:, k], p_on[:, k]]),
                (np.concatenate([off_index, on_index]), np.tile(columns, 2)),
            ),
            shape=(n, n),
        ).tocsr()
        kernel = np.asarray(step @ kernel)
    return kernel
