# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Synthetic data generators: Gibbs, Swendsen-Wang, exact and ICA samplers."""

from __future__ import annotations  # required for constructor type hinting

import logging
import typing
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import sparse, special
from scipy.sparse import csgraph

from ._dataset import ContinuousDataset, DiscreteDataset, enumerate_states
from ._model import CouplingMatrix, IsingModel, on_probability
from ._types import BitArray, FloatArray

_logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 1000
DEFAULT_THIN = 10


@dataclass(frozen=True)
class ChainConfig:
    """Settings of a Markov chain sampler.

    Attributes:
        burn_in: Sweeps discarded before the first kept sample.
        thin: Sweeps between kept samples.
        seed: Seed of the chain.
        n_chains: Independent chains run in lock step; kept samples are
            taken from them round-robin.
    """

    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValueError: If a setting is out of range.
        """
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.n_chains < 1:
            raise ValueError(f"n_chains must be >= 1, got {self.n_chains}")


SweepFunction: typing.TypeAlias = typing.Callable[[BitArray, np.random.Generator], None]


def _run_chains(
    d: int, n_samples: int, cfg: ChainConfig, sweep: SweepFunction
) -> DiscreteDataset:
    """Run chains from uniform random starts and collect thinned samples."""
    if n_samples < 0:
        raise ValueError(f"n_samples must be >= 0, got {n_samples}")
    if n_samples == 0:
        return DiscreteDataset.from_samples(np.zeros((0, d)), d=d)
    rng = np.random.default_rng(cfg.seed)
    states = rng.integers(0, 2, size=(cfg.n_chains, d)).astype(np.int8)
    for _ in range(cfg.burn_in):
        sweep(states, rng)
    rounds = -(-n_samples // cfg.n_chains)
    kept = np.empty((rounds, cfg.n_chains, d), dtype=np.int8)
    for keep in range(rounds):
        for _ in range(cfg.thin):
            sweep(states, rng)
        kept[keep] = states
    _logger.debug(
        "Collected %d samples from %d chains after %d burn-in sweeps",
        n_samples,
        cfg.n_chains,
        cfg.burn_in,
    )
    return DiscreteDataset.from_samples(kept.reshape(-1, d)[:n_samples], d=d)


def gibbs_sweep(states: BitArray, coupling: CouplingMatrix, rng: np.random.Generator) -> None:
    """Update every unit of every chain once, in ascending order, by heat bath.

    Args:
        states: One chain state per row, updated in place.
        coupling: The spin glass parameters.
        rng: The random source; one uniform per chain and unit.
    """
    pairs = 2.0 * coupling.pair_matrix()
    for k in range(coupling.d):
        fields = states @ pairs[:, k] + coupling.diag[k]
        states[:, k] = rng.random(len(states)) < on_probability(fields)


def gibbs_sample(
    coupling: CouplingMatrix, n_samples: int, cfg: ChainConfig | None = None
) -> DiscreteDataset:
    """Sample a spin glass by sequential single-site heat-bath sweeps.

    Unit `k` is switched on with probability `1 / (1 + exp(F_k))`, `F_k` being
    the on-minus-off energy gap.

    Args:
        coupling: The spin glass parameters.
        n_samples: Number of kept samples.
        cfg: The chain settings.

    Returns:
        The samples as a dataset; deterministic given the seed.
    """
    config = cfg or ChainConfig()
    return _run_chains(
        coupling.d,
        n_samples,
        config,
        lambda states, rng: gibbs_sweep(states, coupling, rng),
    )


@dataclass(frozen=True)
class SpinParameters:
    """A spin glass rewritten over `s = 2x - 1` as `-sum K_ij s_i s_j - sum H_i s_i`.

    Attributes:
        edges: The coupled pairs.
        bonds: One coupling `K_ij` per pair.
        fields: The fields `H_i`.
    """

    edges: npt.NDArray[np.int64]
    bonds: FloatArray
    fields: FloatArray

    @classmethod
    def from_coupling(cls, coupling: CouplingMatrix) -> SpinParameters:
        """Convert {0,1} parameters to spin parameters, dropping the constant.

        Args:
            coupling: The spin glass parameters.

        Returns:
            The equivalent spin couplings and fields.
        """
        pair_sums = coupling.pair_matrix().sum(axis=1)
        return cls(
            edges=coupling.support.edges,
            bonds=-0.5 * coupling.offdiag,
            fields=-(0.5 * coupling.diag + 0.5 * pair_sums),
        )


class _SwendsenWang:
    """Cluster sweeps with satisfied-bond activation and Metropolis cluster flips."""

    def __init__(self, coupling: CouplingMatrix, n_chains: int) -> None:
        self._spins = SpinParameters.from_coupling(coupling)
        self._d = coupling.d
        self._n_chains = n_chains
        self._activation = -np.expm1(-2.0 * np.abs(self._spins.bonds))
        offsets = self._d * np.arange(n_chains)[:, np.newaxis]
        self._first = (self._spins.edges[:, 0] + offsets).ravel()
        self._second = (self._spins.edges[:, 1] + offsets).ravel()
        self._fields = np.tile(self._spins.fields, n_chains)

    def sweep(self, states: BitArray, rng: np.random.Generator) -> None:
        spins = 2.0 * states.astype(np.float64) - 1.0
        edges = self._spins.edges
        satisfied = self._spins.bonds * spins[:, edges[:, 0]] * spins[:, edges[:, 1]] > 0
        active = (satisfied & (rng.random(satisfied.shape) < self._activation)).ravel()
        size = self._d * self._n_chains
        graph = sparse.coo_matrix(
            (np.ones(int(active.sum())), (self._first[active], self._second[active])),
            shape=(size, size),
        )
        n_clusters, labels = csgraph.connected_components(graph, directed=False)
        flat = spins.ravel()
        # Field energy change of flipping a whole cluster.
        deltas = 2.0 * np.bincount(labels, weights=self._fields * flat, minlength=n_clusters)
        flips = rng.random(n_clusters) < np.exp(-np.maximum(deltas, 0.0))
        flat = np.where(flips[labels], -flat, flat)
        states[...] = (flat.reshape(states.shape) > 0).astype(np.int8)


def swendsen_wang_sample(
    coupling: CouplingMatrix, n_samples: int, cfg: ChainConfig | None = None
) -> DiscreteDataset:
    """Sample a spin glass by Swendsen-Wang cluster sweeps.

    Bonds are activated only in their satisfied configuration, with
    probability `1 - exp(-2 |K_ij|)`, which is valid for either coupling
    sign. Fields are not absorbed into bonds; each cluster is instead flipped
    with Metropolis acceptance of its total field energy change.

    Args:
        coupling: The spin glass parameters.
        n_samples: Number of kept samples.
        cfg: The chain settings.

    Returns:
        The samples as a dataset; deterministic given the seed.
    """
    config = cfg or ChainConfig()
    dynamics = _SwendsenWang(coupling, config.n_chains)
    return _run_chains(coupling.d, n_samples, config, dynamics.sweep)


def exact_sample(coupling: CouplingMatrix, n_samples: int, seed: int = 0) -> DiscreteDataset:
    """Draw i.i.d. states from the enumerated model distribution.

    Args:
        coupling: The spin glass parameters.
        n_samples: Number of samples.
        seed: The random seed.

    Returns:
        The samples as a dataset.

    Raises:
        EnumerationLimitError: If the dimension is too large to enumerate.
    """
    states = enumerate_states(coupling.d)
    if n_samples == 0:
        return DiscreteDataset.from_samples(np.zeros((0, coupling.d)), d=coupling.d)
    model = IsingModel(coupling.support)
    probs = special.softmax(-model.energies(states, model.parameters(coupling)))
    cumulative = np.cumsum(probs)
    rng = np.random.default_rng(seed)
    draws = np.searchsorted(cumulative, rng.random(n_samples) * cumulative[-1], side="right")
    return DiscreteDataset.from_samples(states[np.minimum(draws, len(states) - 1)], d=coupling.d)


def sample_ica(mixing: npt.ArrayLike, n_samples: int, seed: int = 0) -> ContinuousDataset:
    """Generate observations `x = A s` with i.i.d. unit Laplace sources `s`.

    Args:
        mixing: The square mixing matrix `A`.
        n_samples: Number of observations.
        seed: The random seed.

    Returns:
        The observations; their exact filters are `inv(A)`.

    Raises:
        ValueError: If the mixing matrix is not square.
    """
    matrix = np.asarray(mixing, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Mixing matrix must be square, got shape {matrix.shape}")
    rng = np.random.default_rng(seed)
    sources = rng.laplace(0.0, 1.0, size=(n_samples, matrix.shape[0]))
    return ContinuousDataset(sources @ matrix.T)
