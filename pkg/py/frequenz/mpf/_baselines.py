# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Comparison estimators for spin glasses: pseudolikelihood, CD-k and MFT+TAP."""

from __future__ import annotations  # required for constructor type hinting

import logging
import time
import typing
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from ._dataset import DiscreteDataset
from ._exceptions import DimensionMismatchError
from ._model import (
    CouplingMatrix,
    IsingModel,
    Support,
    log_on_probability,
    on_probability,
)
from ._optimize import (
    IterationCallback,
    LinearSchedule,
    OptimizerOptions,
    OptimizeTrace,
    Trajectory,
    gd_minimize,
    lbfgs_minimize,
)
from ._samplers import gibbs_sweep
from ._types import BitArray, FloatArray, ObjectiveEval

_logger = logging.getLogger(__name__)

DEFAULT_CD_RATE_START = 3.0
DEFAULT_CD_RATE_END = 0.1
DEFAULT_CD_UPDATES = 1000
DEFAULT_MFT_REGULARIZATION = 1e-6

_MEAN_CLIP = 1e-6


@dataclass(frozen=True)
class CdConfig:
    """Settings of contrastive divergence training.

    Attributes:
        k: Gibbs sweeps per reconstruction.
        rate_start: Learning rate of the first update.
        rate_end: Learning rate of the last update.
        n_updates: Number of full-batch updates.
        seed: Seed of the reconstruction chains.
    """

    k: int = 1
    rate_start: float = DEFAULT_CD_RATE_START
    rate_end: float = DEFAULT_CD_RATE_END
    n_updates: int = DEFAULT_CD_UPDATES
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If a setting is out of range.
        """
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.rate_start >= self.rate_end > 0:
            raise ValueError(
                f"Rates must satisfy rate_start >= rate_end > 0, "
                f"got {self.rate_start} and {self.rate_end}"
            )
        if self.n_updates < 0:
            raise ValueError(f"n_updates must be >= 0, got {self.n_updates}")


@dataclass(frozen=True)
class MftTapConfig:
    """Settings of the mean-field inversion.

    Attributes:
        regularization: The ridge `lambda` of the regularized pseudoinverse.
        tap_enabled: Whether the second-order TAP correction is applied.
    """

    regularization: float = DEFAULT_MFT_REGULARIZATION
    tap_enabled: bool = True

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If the regularization is negative.
        """
        if self.regularization < 0:
            raise ValueError(f"regularization must be >= 0, got {self.regularization}")


def _check_data(model: IsingModel, data: DiscreteDataset) -> None:
    if data.d != model.d:
        raise DimensionMismatchError(
            f"Data of dimension {data.d} does not match model dimension {model.d}"
        )


def pseudolikelihood_objective(
    model: IsingModel, theta: npt.ArrayLike, data: DiscreteDataset
) -> ObjectiveEval:
    """Evaluate the average negative log pseudolikelihood.

    Every unit contributes `-log p(x_i | x_-i)`, which is
    `log(1 + exp(s_i F_i))` with `s_i = 2 x_i - 1` and the local field `F_i`.

    Args:
        model: The Ising model family.
        theta: The flat parameter vector.
        data: The weighted data states.

    Returns:
        The value and its analytic gradient.

    Raises:
        DimensionMismatchError: If dimensions disagree.
    """
    _check_data(model, data)
    vector = model.layout.check(theta)
    if data.n_states == 0:
        return ObjectiveEval(0.0, np.zeros(model.layout.size))
    probs = data.probabilities()
    signs = 2.0 * data.states - 1.0
    signed_fields = signs * model.local_fields(data.states, vector)
    # The Gibbs conditional of the observed value of every unit.
    value = -float(probs @ log_on_probability(signed_fields).sum(axis=1))
    coefficients = probs[:, np.newaxis] * (1.0 - on_probability(signed_fields)) * signs
    return ObjectiveEval(value, model.field_grad_contraction(data.states, coefficients))


def fit_pseudolikelihood(
    model: IsingModel,
    data: DiscreteDataset,
    *,
    theta0: npt.ArrayLike | None = None,
    options: OptimizerOptions | None = None,
    callback: IterationCallback | None = None,
) -> tuple[FloatArray, OptimizeTrace]:
    """Estimate parameters by maximum pseudolikelihood with L-BFGS.

    Args:
        model: The Ising model family.
        data: The weighted data states.
        theta0: The starting point; zeros when omitted.
        options: L-BFGS settings.
        callback: Called after every accepted iteration.

    Returns:
        The estimate and the optimizer trace.
    """
    start = np.zeros(model.layout.size) if theta0 is None else model.layout.check(theta0)
    return lbfgs_minimize(
        lambda theta: pseudolikelihood_objective(model, theta, data), start, options, callback
    )


Reconstruction: typing.TypeAlias = typing.Callable[
    [BitArray, FloatArray, np.random.Generator], BitArray
]
"""Maps data states, parameters and a random source to reconstructed states."""


def _chain_starts(data: DiscreteDataset) -> tuple[BitArray, FloatArray]:
    """One chain per sample for counted data, one per distinct state otherwise."""
    try:
        rows = data.rows()
    except ValueError:
        return data.states, data.probabilities()
    return rows, np.full(len(rows), 1.0 / len(rows))


def cd_train(
    model: IsingModel,
    theta0: npt.ArrayLike,
    data: DiscreteDataset,
    cfg: CdConfig | None = None,
    *,
    reconstruct: Reconstruction | None = None,
) -> Trajectory:
    """Train by full-batch contrastive divergence with a linearly annealed rate.

    Every update reconstructs each data sample with `k` fresh Gibbs sweeps
    started at the sample and steps
    `theta -= rate * (<dE>_data - <dE>_reconstructions)`.

    Args:
        model: The Ising model family.
        theta0: The starting point.
        data: The weighted data states.
        cfg: The training settings.
        reconstruct: Replaces the Gibbs reconstruction; used to freeze chains.

    Returns:
        The parameters after every update with their timestamps; the values
        are the mean energy gaps between data and reconstructions.

    Raises:
        DimensionMismatchError: If dimensions disagree.
    """
    _check_data(model, data)
    config = cfg or CdConfig()
    start = model.layout.check(theta0)
    rng = np.random.default_rng(config.seed)
    starts, weights = _chain_starts(data)
    data_moments = weights @ model.param_grads(starts, start)

    def gibbs_reconstruction(
        states: BitArray, theta: FloatArray, generator: np.random.Generator
    ) -> BitArray:
        chains = states.copy()
        coupling = model.coupling(theta)
        for _ in range(config.k):
            gibbs_sweep(chains, coupling, generator)
        return chains

    reconstruction = reconstruct or gibbs_reconstruction

    def update_direction(theta: FloatArray) -> ObjectiveEval:
        recon = reconstruction(starts, theta, rng)
        gap = float(weights @ (model.energies(starts, theta) - model.energies(recon, theta)))
        return ObjectiveEval(gap, data_moments - weights @ model.param_grads(recon, theta))

    trajectory = Trajectory(thetas=[start.copy()], elapsed_s=[0.0])
    clock_start = time.perf_counter()

    def record(_: int, theta: FloatArray, evaluation: ObjectiveEval) -> None:
        trajectory.thetas.append(theta.copy())
        trajectory.elapsed_s.append(time.perf_counter() - clock_start)
        trajectory.values.append(evaluation.value)

    _logger.info(
        "CD-%d: %d updates, rate %.3g -> %.3g",
        config.k,
        config.n_updates,
        config.rate_start,
        config.rate_end,
    )
    gd_minimize(
        update_direction,
        start,
        LinearSchedule(config.rate_start, config.rate_end, config.n_updates),
        config.n_updates,
        record,
    )
    return trajectory


def _tap_couplings(
    naive: FloatArray, inverse: FloatArray, spin_means: FloatArray
) -> tuple[FloatArray, int]:
    """Solve `A_ij = -J - 2 m_i m_j J^2` per pair for the root continuous in `m_i m_j`.

    Pairs without a real root, or with `m_i m_j` close to zero, keep the
    naive mean-field value.
    """
    products = np.outer(spin_means, spin_means)
    discriminant = 1.0 - 8.0 * products * inverse
    usable = (np.abs(products) > 1e-12) & (discriminant >= 0)
    safe_products = np.where(usable, products, 1.0)
    root = (-1.0 + np.sqrt(np.where(usable, discriminant, 1.0))) / (4.0 * safe_products)
    fallbacks = int(((discriminant < 0) & ~np.eye(len(spin_means), dtype=bool)).sum() // 2)
    return np.where(usable, root, naive), fallbacks


def mft_tap_fit(
    data: DiscreteDataset,
    cfg: MftTapConfig | None = None,
    support: Support | None = None,
) -> CouplingMatrix:
    """Estimate a spin glass by inverting the regularized susceptibility matrix.

    The inversion runs on spin variables `s = 2x - 1` with
    `p(s) ~ exp(sum_{i<j} J_ij s_i s_j + sum_i h_i s_i)`:

    - naive mean field: `J_ij = -A_ij` with `A = (C^T C + lambda I)^+ C^T`
      and `C` the spin covariance,
    - TAP: the root of `A_ij = -J_ij - 2 m_i m_j J_ij^2` that tends to the
      naive value as `m_i m_j -> 0`,
    - fields: `h_i = atanh(m_i) - sum_j J_ij m_j (+ m_i sum_j J_ij^2 (1 - m_j^2))`.

    The result is converted back to the {0,1} parameterization. Units that
    are always on or always off get zero couplings and a warning.

    Args:
        data: The weighted data states.
        cfg: The inversion settings.
        support: Restrict the estimate to this support; all pairs when omitted.

    Returns:
        The estimated coupling matrix.

    Raises:
        ValueError: If the dataset is empty.
        DimensionMismatchError: If the support dimension differs from the data.
    """
    config = cfg or MftTapConfig()
    if data.n_states == 0:
        raise ValueError("Mean-field inversion needs at least one sample")
    target = support or Support.full(data.d)
    if target.d != data.d:
        raise DimensionMismatchError(f"Support dimension {target.d} != data dimension {data.d}")

    means, second = data.moments()
    covariance = 4.0 * (second - np.outer(means, means))
    degenerate = (means <= 0.0) | (means >= 1.0) | (np.diag(covariance) <= 0.0)
    if degenerate.any():
        _logger.warning(
            "Units %s are constant in the data; their couplings are set to 0",
            np.flatnonzero(degenerate).tolist(),
        )
    covariance[degenerate, :] = 0.0
    covariance[:, degenerate] = 0.0

    gram = covariance.T @ covariance + config.regularization * np.eye(data.d)
    inverse = np.linalg.pinv(gram) @ covariance.T
    inverse = 0.5 * (inverse + inverse.T)
    spin_means = np.clip(2.0 * means - 1.0, -1.0 + _MEAN_CLIP, 1.0 - _MEAN_CLIP)
    couplings = -inverse
    if config.tap_enabled:
        couplings, fallbacks = _tap_couplings(couplings, inverse, spin_means)
        if fallbacks:
            _logger.warning(
                "TAP has no real root for %d pairs; using naive mean field there", fallbacks
            )

    mask = np.zeros((data.d, data.d), dtype=bool)
    mask[target.edges[:, 0], target.edges[:, 1]] = True
    mask |= mask.T
    mask[degenerate, :] = False
    mask[:, degenerate] = False
    couplings = np.where(mask, 0.5 * (couplings + couplings.T), 0.0)

    fields = np.arctanh(spin_means) - couplings @ spin_means
    if config.tap_enabled:
        fields += spin_means * ((couplings**2) @ (1.0 - spin_means**2))

    pairs = -2.0 * couplings
    biases = -2.0 * fields + 2.0 * couplings.sum(axis=1)
    return CouplingMatrix.from_dense(pairs + np.diag(biases), target)
