# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Weighted binary datasets and continuous datasets."""

from __future__ import annotations  # required for constructor type hinting

import functools
import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from ._exceptions import DimensionMismatchError, EnumerationLimitError
from ._model import as_states
from ._types import BitArray, FloatArray

_logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 20
"""Largest dimension for which all `2^d` states are ever enumerated."""

_INT_CODE_LIMIT = 62


def enumerate_states(d: int) -> BitArray:
    """List every binary state of dimension `d`.

    Row `i` holds the state whose bit `k` is `(i >> k) & 1`.

    Args:
        d: The dimension.

    Returns:
        A `(2^d, d)` array of states.

    Raises:
        EnumerationLimitError: If `d` exceeds `ENUMERATION_LIMIT`.
    """
    if d > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"Enumerating 2^{d} states exceeds the limit of d <= {ENUMERATION_LIMIT}"
        )
    index = np.arange(2**d, dtype=np.int64)
    return ((index[:, np.newaxis] >> np.arange(d)) & 1).astype(np.int8)


def state_index(states: BitArray) -> npt.NDArray[np.int64]:
    """Return the enumeration index of every state.

    Args:
        states: One state per row, `d <= 62`.

    Returns:
        The index `sum_k x_k 2^k` of every row.
    """
    weights = np.left_shift(np.int64(1), np.arange(states.shape[1], dtype=np.int64))
    return states.astype(np.int64) @ weights


@dataclass(frozen=True, eq=False)
class DiscreteDataset:
    """A weighted multiset of binary states with each distinct state stored once.

    Attributes:
        d: The state dimension.
        states: The distinct states, one per row, in lexicographic order.
        weights: The accumulated positive weight of every distinct state.
    """

    d: int
    states: BitArray
    weights: FloatArray

    def __post_init__(self) -> None:
        """Validate the dataset invariants.

        Raises:
            DimensionMismatchError: If shapes disagree.
            ValueError: If a weight is not positive or a state repeats.
        """
        if self.states.shape != (len(self.weights), self.d):
            raise DimensionMismatchError(
                f"States of shape {self.states.shape} do not match "
                f"{len(self.weights)} weights of dimension {self.d}"
            )
        if (self.weights <= 0).any() or not np.isfinite(self.weights).all():
            raise ValueError("Dataset weights must be finite and positive")
        if len(np.unique(self.states, axis=0)) != len(self.states):
            raise ValueError("Dataset states must be consolidated")

    @classmethod
    def from_samples(
        cls,
        samples: npt.ArrayLike,
        weights: npt.ArrayLike | None = None,
        d: int | None = None,
    ) -> DiscreteDataset:
        """Consolidate samples, which may repeat, into a weighted dataset.

        Args:
            samples: One state per row; may be empty if `d` is given.
            weights: Optional positive weight per sample (default 1 each).
            d: The dimension; required for an empty sample list.

        Returns:
            The consolidated dataset.

        Raises:
            ValueError: If the dimension cannot be determined or weights are
                invalid.
        """
        array = np.asarray(samples)
        if array.size == 0:
            if d is None:
                raise ValueError("The dimension of an empty dataset must be given")
            return cls(d, np.zeros((0, d), dtype=np.int8), np.zeros(0))
        states = as_states(array, d)
        if weights is None:
            sample_weights = np.ones(len(states))
        else:
            sample_weights = np.asarray(weights, dtype=np.float64)
            if sample_weights.shape != (len(states),):
                raise ValueError("Exactly one weight per sample is required")
        unique, inverse = np.unique(states, axis=0, return_inverse=True)
        accumulated = np.bincount(inverse.ravel(), weights=sample_weights, minlength=len(unique))
        return cls(states.shape[1], unique.astype(np.int8), accumulated)

    @classmethod
    def from_probabilities(cls, probabilities: npt.ArrayLike, d: int) -> DiscreteDataset:
        """Build a full or partial support dataset from a probability vector.

        Args:
            probabilities: One probability per enumerated state (see
                `enumerate_states`); zero entries are left out.
            d: The dimension.

        Returns:
            The weighted dataset.

        Raises:
            DimensionMismatchError: If the vector length is not `2^d`.
        """
        probs = np.asarray(probabilities, dtype=np.float64)
        if probs.shape != (2**d,):
            raise DimensionMismatchError(
                f"Expected {2**d} probabilities, got shape {probs.shape}"
            )
        keep = probs > 0
        return cls.from_samples(enumerate_states(d)[keep], probs[keep], d=d)

    @property
    def n_states(self) -> int:
        """Return the number of distinct states.

        Returns:
            The distinct state count.
        """
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        """Return the sum of all weights.

        Returns:
            The total weight, `M` for unweighted samples.
        """
        return float(self.weights.sum())

    def probabilities(self) -> FloatArray:
        """Return the empirical probability of every distinct state.

        Returns:
            The weights normalized to sum to one.
        """
        return self.weights / self.total_weight

    def scaled(self, factor: float) -> DiscreteDataset:
        """Return the same dataset with every weight multiplied by `factor`.

        Args:
            factor: A positive scale.

        Returns:
            The rescaled dataset.
        """
        return DiscreteDataset(self.d, self.states, self.weights * factor)

    def rows(self) -> BitArray:
        """Expand integral weights back into one row per sample.

        Returns:
            The samples, each distinct state repeated by its weight.

        Raises:
            ValueError: If a weight is not an integer.
        """
        counts = np.rint(self.weights)
        if not np.allclose(counts, self.weights, rtol=0.0, atol=1e-9):
            raise ValueError("Only datasets with integral weights expand into rows")
        return np.repeat(self.states, counts.astype(np.int64), axis=0)

    def moments(self) -> tuple[FloatArray, FloatArray]:
        """Compute the weighted first and second moments of the data.

        Returns:
            The means `<x_i>` and the matrix `<x_i x_j>`.
        """
        probs = self.probabilities()
        x = self.states.astype(np.float64)
        return probs @ x, (x * probs[:, np.newaxis]).T @ x

    @functools.cached_property
    def flip_in_data(self) -> npt.NDArray[np.bool_]:
        """For every state and bit, whether flipping the bit yields a data state."""
        if self.n_states == 0:
            return np.zeros((0, self.d), dtype=bool)
        if self.d <= _INT_CODE_LIMIT:
            codes = state_index(self.states)
            masks = np.left_shift(np.int64(1), np.arange(self.d, dtype=np.int64))
            return np.isin(codes[:, np.newaxis] ^ masks, codes)
        _logger.debug("Building byte-keyed membership index for d=%d", self.d)
        keys = {row.tobytes() for row in self.states}
        result = np.zeros((self.n_states, self.d), dtype=bool)
        for s, row in enumerate(self.states):
            flipped = row.copy()
            for k in range(self.d):
                flipped[k] ^= 1
                result[s, k] = flipped.tobytes() in keys
                flipped[k] ^= 1
        return result

    @functools.cached_property
    def complement_in_data(self) -> npt.NDArray[np.bool_]:
        """For every state, whether its all-bits-flipped complement is a data state."""
        keys = {row.tobytes() for row in self.states}
        return np.array(
            [(1 - row).astype(np.int8).tobytes() in keys for row in self.states],
            dtype=bool,
        )


@dataclass(frozen=True, eq=False)
class ContinuousDataset:
    """Real valued observations, one per row.

    Attributes:
        points: An `(n, d)` array of finite observations.
    """

    points: FloatArray

    def __post_init__(self) -> None:
        """Validate the observations.

        Raises:
            ValueError: If the array is not 2-D or holds non-finite values.
        """
        if self.points.ndim != 2:
            raise ValueError(f"Points must be 2-D, got shape {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("Continuous observations must be finite")

    @property
    def d(self) -> int:
        """Return the data dimension.

        Returns:
            The number of columns.
        """
        return int(self.points.shape[1])

    def __len__(self) -> int:
        """Return the number of observations.

        Returns:
            The row count.
        """
        return int(self.points.shape[0])
