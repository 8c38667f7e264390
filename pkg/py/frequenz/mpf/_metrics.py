# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Recovery metrics against a known generating model."""

from __future__ import annotations  # required for constructor type hinting

import numpy as np
import numpy.typing as npt

from ._dataset import DiscreteDataset
from ._exceptions import DimensionMismatchError
from ._model import CouplingMatrix
from ._types import FloatArray


def _union_pairs(truth: CouplingMatrix, estimate: CouplingMatrix) -> npt.NDArray[np.int64]:
    edges = np.concatenate([truth.support.edges, estimate.support.edges])
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(edges, axis=0)


def coupling_error(truth: CouplingMatrix, estimate: CouplingMatrix) -> float:
    """Compute the mean square coupling error `eps_J`.

    The mean runs over the union of both supports plus the biases, using
    the stored pair parameterization for both models.

    Args:
        truth: The generating model.
        estimate: The estimated model.

    Returns:
        The mean square difference.

    Raises:
        DimensionMismatchError: If the dimensions differ.
    """
    if truth.d != estimate.d:
        raise DimensionMismatchError(f"Dimensions {truth.d} and {estimate.d} differ")
    pairs = _union_pairs(truth, estimate)
    true_pairs = truth.pair_matrix()[pairs[:, 0], pairs[:, 1]]
    estimated_pairs = estimate.pair_matrix()[pairs[:, 0], pairs[:, 1]]
    diffs = np.concatenate([true_pairs - estimated_pairs, truth.diag - estimate.diag])
    return float(np.mean(diffs**2))


def empirical_correlations(data: DiscreteDataset) -> FloatArray:
    """Compute the connected correlations of the data.

    Args:
        data: The weighted data states.

    Returns:
        `<x_i x_j> - <x_i><x_j>`, variances on the diagonal.
    """
    means, second = data.moments()
    return second - np.outer(means, means)


def _upper(matrix: npt.ArrayLike) -> FloatArray:
    array = np.asarray(matrix, dtype=np.float64)
    return array[np.triu_indices(array.shape[0], k=1)]


def correlation_error(truth: npt.ArrayLike, estimate: npt.ArrayLike) -> float:
    """Compute the mean square error `eps_corr` over all pairs `i < j`.

    Args:
        truth: The reference correlation matrix.
        estimate: The compared correlation matrix.

    Returns:
        The mean square difference, 0 for `d = 1`.
    """
    diffs = _upper(truth) - _upper(estimate)
    return float(np.mean(diffs**2)) if diffs.size else 0.0


def mean_abs_correlation_error(truth: npt.ArrayLike, estimate: npt.ArrayLike) -> float:
    """Compute the mean absolute correlation error over all pairs `i < j`.

    Args:
        truth: The reference correlation matrix.
        estimate: The compared correlation matrix.

    Returns:
        The mean absolute difference, 0 for `d = 1`.
    """
    diffs = _upper(truth) - _upper(estimate)
    return float(np.mean(np.abs(diffs))) if diffs.size else 0.0
