# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Types shared by the MPF objectives, estimators and optimizers."""

from __future__ import annotations  # required for constructor type hinting

import enum
import typing
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from ._exceptions import DimensionMismatchError

FloatArray: typing.TypeAlias = npt.NDArray[np.float64]
"""A real valued numpy array of any shape."""

BitArray: typing.TypeAlias = npt.NDArray[np.int8]
"""An array of binary states, one state per row, entries in {0, 1}."""


class ConnectivityMode(enum.Enum):
    """Which single-bit-flip neighbors of a data state receive probability flow."""

    STRICT = "strict"
    """Only neighbors that are not themselves data states."""

    ALL_NEIGHBORS = "all"
    """Every single-bit-flip neighbor, data state or not."""


@dataclass(frozen=True)
class ParameterLayout:
    """Named contiguous blocks of a flat parameter vector.

    Attributes:
        blocks: `(name, length)` pairs in storage order.
    """

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        """Validate the block list.

        Raises:
            ValueError: If a block name repeats or a length is negative.
        """
        names = [name for name, _ in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate parameter block names: {names}")
        if any(length < 0 for _, length in self.blocks):
            raise ValueError(f"Negative parameter block length in {self.blocks}")

    @property
    def size(self) -> int:
        """Return the total number of parameters.

        Returns:
            The length of a flat parameter vector with this layout.
        """
        return sum(length for _, length in self.blocks)

    def block(self, name: str) -> slice:
        """Return the index range of a block.

        Args:
            name: Name of the block.

        Returns:
            The slice of the flat vector holding the block.

        Raises:
            KeyError: If there is no block with that name.
        """
        start = 0
        for block_name, length in self.blocks:
            if block_name == name:
                return slice(start, start + length)
            start += length
        raise KeyError(name)

    def pack(self, **values: npt.ArrayLike) -> FloatArray:
        """Concatenate named blocks into a flat vector.

        Args:
            **values: One array per block, keyed by block name.

        Returns:
            The flat parameter vector.

        Raises:
            DimensionMismatchError: If a block is missing or has the wrong length.
        """
        if set(values) != {name for name, _ in self.blocks}:
            raise DimensionMismatchError(
                f"Expected blocks {[n for n, _ in self.blocks]}, got {sorted(values)}"
            )
        parts = []
        for name, length in self.blocks:
            part = np.asarray(values[name], dtype=np.float64).ravel()
            if part.size != length:
                raise DimensionMismatchError(
                    f"Block {name!r} has {part.size} entries, expected {length}"
                )
            parts.append(part)
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def unpack(self, theta: npt.ArrayLike) -> dict[str, FloatArray]:
        """Split a flat vector into its named blocks.

        Args:
            theta: The flat parameter vector.

        Returns:
            A copy of every block, keyed by block name.
        """
        vector = self.check(theta)
        return {name: vector[self.block(name)].copy() for name, _ in self.blocks}

    def check(self, theta: npt.ArrayLike) -> FloatArray:
        """Return `theta` as a float vector after checking its length.

        Args:
            theta: The flat parameter vector.

        Returns:
            The vector as a one dimensional float64 array.

        Raises:
            DimensionMismatchError: If the length does not match the layout.
        """
        vector = np.asarray(theta, dtype=np.float64)
        if vector.ndim != 1 or vector.size != self.size:
            raise DimensionMismatchError(
                f"Parameter vector of shape {vector.shape} does not match "
                f"layout of size {self.size}"
            )
        return vector


@dataclass(frozen=True)
class ObjectiveDiagnostics:
    """Numeric diagnostics collected while evaluating an objective.

    Attributes:
        max_exponent: Largest exponent met before exponentiation.
        term_count: Number of terms summed.
        clamped_terms: Number of exponents clamped by the overflow guard.
        finite_difference: Whether any derivative was approximated numerically.
    """

    max_exponent: float = float("-inf")
    term_count: int = 0
    clamped_terms: int = 0
    finite_difference: bool = False


@dataclass(frozen=True, eq=False)
class ObjectiveEval:
    """The value and parameter gradient of an objective at one point.

    Attributes:
        value: The objective value.
        gradient: The gradient with respect to the flat parameter vector.
        diagnostics: Numeric diagnostics of the evaluation.
    """

    value: float
    gradient: FloatArray
    diagnostics: ObjectiveDiagnostics = field(default_factory=ObjectiveDiagnostics)


ObjectiveFunction: typing.TypeAlias = typing.Callable[[FloatArray], ObjectiveEval]
"""A callable evaluating an objective and its gradient at a parameter vector."""
