# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Energy models: Ising spin glasses over {0,1}^d and continuous energies.

The Ising energy uses the double-sum convention

    E(x) = sum_{i, j != i} J_ij x_i x_j + sum_i J_ii x_i

with `J_ij = J_ji`, so every stored unordered pair contributes
`2 * J_ij * x_i * x_j`.
"""

from __future__ import annotations  # required for constructor type hinting

import abc
import enum
import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import special

from ._exceptions import DimensionMismatchError
from ._types import BitArray, FloatArray, ParameterLayout

_logger = logging.getLogger(__name__)

PAIRS_BLOCK = "pairs"
BIASES_BLOCK = "biases"
FILTERS_BLOCK = "filters"
PRECISION_BLOCK = "precision"


def as_states(states: npt.ArrayLike, d: int | None = None) -> BitArray:
    """Convert one state or a batch of states to a 2-D array of bits.

    Args:
        states: A single state (1-D) or one state per row (2-D).
        d: The expected dimension, if known.

    Returns:
        The states as an `int8` array of shape `(n, d)`.

    Raises:
        ValueError: If an entry is not exactly 0 or 1, or the dimension is < 1.
        DimensionMismatchError: If the dimension differs from `d`.
    """
    array = np.asarray(states)
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2:
        raise ValueError(f"States must be 1-D or 2-D, got shape {array.shape}")
    if array.size and not np.isin(array, (0, 1)).all():
        raise ValueError("Binary states may only contain 0 and 1")
    if array.shape[1] < 1:
        raise ValueError("Binary states need at least one bit")
    if d is not None and array.shape[1] != d:
        raise DimensionMismatchError(
            f"States have dimension {array.shape[1]}, expected {d}"
        )
    return array.astype(np.int8)


def flip(x: npt.ArrayLike, k: int) -> BitArray:
    """Return a copy of a single state with bit `k` flipped.

    Args:
        x: The state.
        k: The bit to flip.

    Returns:
        The flipped state.
    """
    flipped = as_states(x)[0].copy()
    flipped[k] = 1 - flipped[k]
    return flipped


class SupportKind(enum.Enum):
    """How the coupling support of a spin glass was declared."""

    LATTICE = "lattice"
    """Nearest neighbors on an open-boundary square lattice."""

    FULL = "full"
    """All unordered pairs."""

    CUSTOM = "custom"
    """An explicit edge list."""


@dataclass(frozen=True, eq=False)
class Support:
    """The set of unordered pairs `(i, j)`, `i < j`, that may carry a coupling.

    Attributes:
        d: Number of units.
        edges: `(E, 2)` array of pairs, each with `i < j`, in lexicographic order.
        kind: How the support was declared.
        shape: Lattice shape `(rows, cols)` for lattice supports.
    """

    d: int
    edges: npt.NDArray[np.int64]
    kind: SupportKind = SupportKind.CUSTOM
    shape: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        """Validate the edge list.

        Raises:
            ValueError: If the dimension or any edge is invalid.
        """
        if self.d < 1:
            raise ValueError(f"Dimension must be at least 1, got {self.d}")
        edges = self.edges
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"Edges must have shape (E, 2), got {edges.shape}")
        if edges.size and (
            (edges[:, 0] >= edges[:, 1]).any()
            or edges.min() < 0
            or edges.max() >= self.d
        ):
            raise ValueError("Every edge must satisfy 0 <= i < j < d")
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        if (order != np.arange(len(edges))).any():
            raise ValueError("Edges must be sorted lexicographically")
        if len(np.unique(edges, axis=0)) != len(edges):
            raise ValueError("Edges must not repeat")

    @classmethod
    def from_edges(cls, d: int, edges: npt.ArrayLike) -> Support:
        """Build a custom support from any list of unordered pairs.

        Args:
            d: Number of units.
            edges: Pairs `(i, j)` in any order and orientation.

        Returns:
            The support with normalized, sorted edges.
        """
        array = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        array = np.sort(array, axis=1)
        array = np.unique(array, axis=0)
        return cls(d=d, edges=array)

    @classmethod
    def lattice(cls, rows: int, cols: int) -> Support:
        """Build the nearest-neighbor support of an open-boundary square lattice.

        Unit `r * cols + c` sits at row `r`, column `c`.

        Args:
            rows: Number of lattice rows.
            cols: Number of lattice columns.

        Returns:
            The lattice support.

        Raises:
            ValueError: If a side is smaller than 1.
        """
        if rows < 1 or cols < 1:
            raise ValueError(f"Lattice sides must be >= 1, got {rows}x{cols}")
        index = np.arange(rows * cols).reshape(rows, cols)
        right = np.stack([index[:, :-1].ravel(), index[:, 1:].ravel()], axis=1)
        down = np.stack([index[:-1, :].ravel(), index[1:, :].ravel()], axis=1)
        edges = np.concatenate([right, down]).astype(np.int64)
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
        return cls(
            d=rows * cols, edges=edges, kind=SupportKind.LATTICE, shape=(rows, cols)
        )

    @classmethod
    def full(cls, d: int) -> Support:
        """Build the support containing every unordered pair.

        Args:
            d: Number of units.

        Returns:
            The fully connected support.
        """
        i, j = np.triu_indices(d, k=1)
        return cls(
            d=d, edges=np.stack([i, j], axis=1).astype(np.int64), kind=SupportKind.FULL
        )

    @property
    def n_edges(self) -> int:
        """Return the number of pairs in the support.

        Returns:
            The edge count.
        """
        return len(self.edges)

    @functools.cached_property
    def neighbors(self) -> tuple[tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]], ...]:
        """Per unit, the neighboring units and the edge index linking them."""
        result = []
        for k in range(self.d):
            as_first = np.flatnonzero(self.edges[:, 0] == k)
            as_second = np.flatnonzero(self.edges[:, 1] == k)
            units = np.concatenate([self.edges[as_first, 1], self.edges[as_second, 0]])
            edge_ids = np.concatenate([as_first, as_second])
            order = np.argsort(units, kind="stable")
            result.append((units[order], edge_ids[order]))
        return tuple(result)


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Couplings and biases of a spin glass over {0,1}^d.

    Attributes:
        support: The declared coupling support.
        offdiag: One coupling `J_ij` per support edge, in edge order.
        diag: The bias terms `J_ii`.
    """

    support: Support
    offdiag: FloatArray
    diag: FloatArray

    def __post_init__(self) -> None:
        """Check the parameter shapes against the support.

        Raises:
            DimensionMismatchError: If a shape does not match the support.
        """
        if self.offdiag.shape != (self.support.n_edges,):
            raise DimensionMismatchError(
                f"Expected {self.support.n_edges} couplings, got {self.offdiag.shape}"
            )
        if self.diag.shape != (self.support.d,):
            raise DimensionMismatchError(
                f"Expected {self.support.d} biases, got {self.diag.shape}"
            )

    @classmethod
    def zeros(cls, support: Support) -> CouplingMatrix:
        """Create a glass with all couplings and biases set to zero.

        Args:
            support: The coupling support.

        Returns:
            The zero glass.
        """
        return cls(support, np.zeros(support.n_edges), np.zeros(support.d))

    @classmethod
    def from_dense(cls, matrix: npt.ArrayLike, support: Support) -> CouplingMatrix:
        """Read couplings of a support and the diagonal out of a dense matrix.

        Args:
            matrix: A `d x d` matrix; only its upper triangle and diagonal are read.
            support: The coupling support.

        Returns:
            The coupling matrix.
        """
        dense = np.asarray(matrix, dtype=np.float64)
        return cls(
            support,
            dense[support.edges[:, 0], support.edges[:, 1]].copy(),
            np.diag(dense).copy(),
        )

    @property
    def d(self) -> int:
        """Return the number of units.

        Returns:
            The dimension.
        """
        return self.support.d

    def pair_matrix(self) -> FloatArray:
        """Return the symmetric coupling matrix with a zero diagonal.

        Returns:
            The `d x d` matrix `W` with `W_ij = W_ji = J_ij`.
        """
        matrix = np.zeros((self.d, self.d))
        i, j = self.support.edges[:, 0], self.support.edges[:, 1]
        matrix[i, j] = self.offdiag
        matrix[j, i] = self.offdiag
        return matrix

    def full_matrix(self) -> FloatArray:
        """Return the symmetric coupling matrix including the biases on the diagonal.

        Returns:
            The dense `d x d` matrix `J`.
        """
        return self.pair_matrix() + np.diag(self.diag)


def ising_energy(x: npt.ArrayLike, coupling: CouplingMatrix) -> float:
    """Compute the energy of one binary state.

    Args:
        x: The state.
        coupling: The spin glass parameters.

    Returns:
        The energy `E(x)`.
    """
    state = as_states(x, coupling.d)[0].astype(np.float64)
    edges = coupling.support.edges
    pair_terms = state[edges[:, 0]] * state[edges[:, 1]]
    return float(2.0 * np.dot(pair_terms, coupling.offdiag) + np.dot(state, coupling.diag))


def flip_energy_delta(x: npt.ArrayLike, k: int, coupling: CouplingMatrix) -> float:
    """Compute `E(x with bit k flipped) - E(x)` from the neighbors of `k` only.

    Args:
        x: The state.
        k: The bit to flip.
        coupling: The spin glass parameters.

    Returns:
        The energy change of the flip.

    Raises:
        IndexError: If `k` is not a valid unit index.
    """
    state = as_states(x, coupling.d)[0]
    if not 0 <= k < coupling.d:
        raise IndexError(f"Bit index {k} out of range for dimension {coupling.d}")
    units, edge_ids = coupling.support.neighbors[k]
    field_k = 2.0 * np.dot(coupling.offdiag[edge_ids], state[units]) + coupling.diag[k]
    return float((1 - 2 * int(state[k])) * field_k)


def on_probability(fields: npt.ArrayLike) -> FloatArray:
    """Return the conditional probability of a unit being on given its field.

    Gibbs sampling, pseudolikelihood and contrastive divergence all share
    this conditional.

    Args:
        fields: On-minus-off energy gaps `2 sum_{j != k} J_kj x_j + J_kk`.

    Returns:
        `1 / (1 + exp(field))`, elementwise.
    """
    return np.asarray(special.expit(-np.asarray(fields, dtype=np.float64)), dtype=np.float64)


def log_on_probability(fields: npt.ArrayLike) -> FloatArray:
    """Return the logarithm of `on_probability`.

    Args:
        fields: On-minus-off energy gaps.

    Returns:
        `-log(1 + exp(field))`, elementwise and without underflow.
    """
    return np.asarray(-np.logaddexp(0.0, np.asarray(fields, dtype=np.float64)), dtype=np.float64)


def ising_param_grad(x: npt.ArrayLike, coupling: CouplingMatrix) -> FloatArray:
    """Compute the gradient of the energy of one state with respect to the parameters.

    Args:
        x: The state.
        coupling: The spin glass parameters.

    Returns:
        The flat gradient in the `pairs`, `biases` layout of `IsingModel`.
    """
    state = as_states(x, coupling.d)[0].astype(np.float64)
    edges = coupling.support.edges
    return np.concatenate([2.0 * state[edges[:, 0]] * state[edges[:, 1]], state])


def _column_sum_zero_glass(support: Support, sigma2: float, seed: int) -> CouplingMatrix:
    if sigma2 < 0:
        raise ValueError(f"Coupling variance must be non-negative, got {sigma2}")
    rng = np.random.default_rng(seed)
    offdiag = rng.normal(0.0, np.sqrt(sigma2), size=support.n_edges)
    glass = CouplingMatrix(support, offdiag, np.zeros(support.d))
    diag = -glass.pair_matrix().sum(axis=0)
    return CouplingMatrix(support, offdiag, diag)


def random_lattice_glass(rows: int, cols: int, sigma2: float, seed: int) -> CouplingMatrix:
    """Draw a nearest-neighbor spin glass on an open-boundary square lattice.

    Couplings are i.i.d. normal with variance `sigma2`; each bias is minus the
    sum of its column's couplings, so every column of the full matrix sums to 0
    and `E(1 - x) = E(x)` for every state.

    Args:
        rows: Number of lattice rows.
        cols: Number of lattice columns.
        sigma2: Variance of the couplings.
        seed: Seed of the random generator.

    Returns:
        The random glass.
    """
    return _column_sum_zero_glass(Support.lattice(rows, cols), sigma2, seed)


def random_full_glass(d: int, sigma2: float, seed: int) -> CouplingMatrix:
    """Draw a fully connected spin glass with column-sum-zero biases.

    Args:
        d: Number of units.
        sigma2: Variance of the couplings.
        seed: Seed of the random generator.

    Returns:
        The random glass.
    """
    return _column_sum_zero_glass(Support.full(d), sigma2, seed)


@dataclass(frozen=True, eq=False)
class IcaParameters:
    """Filters of a square ICA model with a Laplace prior.

    Attributes:
        filters: The `d x d` filter matrix, one filter `J_k` per row.
    """

    filters: FloatArray

    def __post_init__(self) -> None:
        """Check that the filter matrix is square.

        Raises:
            DimensionMismatchError: If the matrix is not square.
        """
        if self.filters.ndim != 2 or self.filters.shape[0] != self.filters.shape[1]:
            raise DimensionMismatchError(
                f"ICA filters must be square, got shape {self.filters.shape}"
            )

    @property
    def d(self) -> int:
        """Return the data dimension.

        Returns:
            The number of filters.
        """
        return int(self.filters.shape[0])


def _as_real_vector(x: npt.ArrayLike, d: int) -> FloatArray:
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape != (d,):
        raise DimensionMismatchError(f"Expected a vector of length {d}, got {vector.shape}")
    return vector


def ica_energy(x: npt.ArrayLike, params: IcaParameters) -> float:
    """Compute the Laplace ICA energy `sum_k |J_k x|`.

    The `-log det J` normalizer is left out; it cancels in every energy
    difference at fixed parameters.

    Args:
        x: The data vector.
        params: The ICA filters.

    Returns:
        The energy.
    """
    vector = _as_real_vector(x, params.d)
    return float(np.abs(params.filters @ vector).sum())


def ica_energy_grad_x(x: npt.ArrayLike, params: IcaParameters) -> FloatArray:
    """Compute the gradient of the Laplace ICA energy with respect to the data.

    Uses `sign(0) = 0`.

    Args:
        x: The data vector.
        params: The ICA filters.

    Returns:
        `sum_k sign(J_k x) J_k`.
    """
    vector = _as_real_vector(x, params.d)
    return np.sign(params.filters @ vector) @ params.filters


def ica_param_grad(x: npt.ArrayLike, params: IcaParameters) -> FloatArray:
    """Compute the gradient of the Laplace ICA energy with respect to the filters.

    Args:
        x: The data vector.
        params: The ICA filters.

    Returns:
        The flat, row-major gradient `sign(J_k x) x_l`.
    """
    vector = _as_real_vector(x, params.d)
    return np.outer(np.sign(params.filters @ vector), vector).ravel()


class DiscreteEnergyModel(abc.ABC):
    """A parametric energy over binary states with a flat parameter vector."""

    d: int
    layout: ParameterLayout

    @abc.abstractmethod
    def energies(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the energy of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            One energy per state.
        """

    @abc.abstractmethod
    def param_grads(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the parameter gradient of the energy of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, n_params)` array of gradients.
        """

    def flip_deltas(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the energy change of every single bit flip of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array with `E(flip_k x) - E(x)` in column `k`.
        """
        base = self.energies(states, theta)
        deltas = np.empty(states.shape, dtype=np.float64)
        for k in range(self.d):
            flipped = states.copy()
            flipped[:, k] = 1 - flipped[:, k]
            deltas[:, k] = self.energies(flipped, theta) - base
        return deltas

    def flip_grad_contraction(
        self, states: BitArray, coefficients: FloatArray, theta: FloatArray
    ) -> FloatArray:
        """Contract per-flip energy gradient differences with coefficients.

        Args:
            states: One state per row.
            coefficients: An `(n, d)` weight per state and flipped bit.
            theta: The flat parameter vector.

        Returns:
            `sum_{s,k} c[s,k] (dE(x_s)/dtheta - dE(flip_k x_s)/dtheta)`.
        """
        base = self.param_grads(states, theta)
        total = np.zeros(self.layout.size)
        for k in range(self.d):
            flipped = states.copy()
            flipped[:, k] = 1 - flipped[:, k]
            total += coefficients[:, k] @ (base - self.param_grads(flipped, theta))
        return total


class IsingModel(DiscreteEnergyModel):
    """The Ising spin glass family on a fixed coupling support.

    The flat parameter vector holds one coupling per support edge (block
    `pairs`) followed by the `d` biases (block `biases`).
    """

    def __init__(self, support: Support) -> None:
        """Initialize the model family.

        Args:
            support: The coupling support shared by every member of the family.
        """
        self.support = support
        self.d = support.d
        self.layout = ParameterLayout(
            ((PAIRS_BLOCK, support.n_edges), (BIASES_BLOCK, support.d))
        )

    def coupling(self, theta: npt.ArrayLike) -> CouplingMatrix:
        """Unpack a parameter vector into a coupling matrix.

        Args:
            theta: The flat parameter vector.

        Returns:
            The corresponding coupling matrix.
        """
        blocks = self.layout.unpack(theta)
        return CouplingMatrix(self.support, blocks[PAIRS_BLOCK], blocks[BIASES_BLOCK])

    def parameters(self, coupling: CouplingMatrix) -> FloatArray:
        """Pack a coupling matrix into a parameter vector.

        Args:
            coupling: The coupling matrix; its support must be this model's.

        Returns:
            The flat parameter vector.

        Raises:
            DimensionMismatchError: If the supports differ.
        """
        if coupling.support is not self.support and not (
            coupling.d == self.d
            and np.array_equal(coupling.support.edges, self.support.edges)
        ):
            raise DimensionMismatchError("Coupling support differs from the model's")
        return self.layout.pack(**{PAIRS_BLOCK: coupling.offdiag, BIASES_BLOCK: coupling.diag})

    def local_fields(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the on-minus-off energy gap of every unit in every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array `2 sum_{j != k} J_kj x_j + J_kk`.
        """
        coupling = self.coupling(theta)
        return 2.0 * (states @ coupling.pair_matrix()) + coupling.diag

    def field_grad_contraction(
        self, states: BitArray, coefficients: FloatArray
    ) -> FloatArray:
        """Contract local field parameter gradients with coefficients.

        Args:
            states: One state per row.
            coefficients: An `(n, d)` weight per state and unit.

        Returns:
            `sum_{s,k} c[s,k] dF_k(x_s)/dtheta` for the local fields `F`.
        """
        x = states.astype(np.float64)
        cross = coefficients.T @ x
        i, j = self.support.edges[:, 0], self.support.edges[:, 1]
        return np.concatenate([2.0 * (cross[i, j] + cross[j, i]), coefficients.sum(axis=0)])

    def energies(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the energy of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            One energy per state.
        """
        coupling = self.coupling(theta)
        x = states.astype(np.float64)
        i, j = self.support.edges[:, 0], self.support.edges[:, 1]
        return 2.0 * ((x[:, i] * x[:, j]) @ coupling.offdiag) + x @ coupling.diag

    def param_grads(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the parameter gradient of the energy of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, n_params)` array of gradients.
        """
        self.layout.check(theta)
        x = states.astype(np.float64)
        i, j = self.support.edges[:, 0], self.support.edges[:, 1]
        return np.concatenate([2.0 * x[:, i] * x[:, j], x], axis=1)

    def flip_deltas(self, states: BitArray, theta: FloatArray) -> FloatArray:
        """Compute the energy change of every single bit flip of every state.

        Args:
            states: One state per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array with `E(flip_k x) - E(x)` in column `k`.
        """
        return (1.0 - 2.0 * states) * self.local_fields(states, theta)

    def flip_grad_contraction(
        self, states: BitArray, coefficients: FloatArray, theta: FloatArray
    ) -> FloatArray:
        """Contract per-flip energy gradient differences with coefficients.

        Args:
            states: One state per row.
            coefficients: An `(n, d)` weight per state and flipped bit.
            theta: The flat parameter vector.

        Returns:
            `sum_{s,k} c[s,k] (dE(x_s)/dtheta - dE(flip_k x_s)/dtheta)`.
        """
        self.layout.check(theta)
        return self.field_grad_contraction(states, coefficients * (2.0 * states - 1.0))


class ContinuousEnergyModel(abc.ABC):
    """A parametric energy over real vectors with a flat parameter vector."""

    d: int
    layout: ParameterLayout

    @abc.abstractmethod
    def energies(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute the energy of every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            One energy per point.
        """

    @abc.abstractmethod
    def grad_x(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute the spatial gradient of the energy at every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array of gradients.
        """

    @abc.abstractmethod
    def param_grads(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute the parameter gradient of the energy at every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, n_params)` array of gradients.
        """

    def laplacian_x(self, points: FloatArray, theta: FloatArray) -> FloatArray | None:
        """Compute the spatial Laplacian of the energy analytically, if available.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            One Laplacian per point, or `None` when the model has no closed form.
        """
        del points, theta
        return None

    def score_terms(
        self, points: FloatArray, theta: FloatArray
    ) -> tuple[FloatArray, FloatArray] | None:
        """Compute per-point score matching terms and their parameter gradients.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            `(values, gradients)` of `0.5 |grad E|^2 - laplacian E` per point, or
            `None` when the model has no closed form.
        """
        del points, theta
        return None

    def check_points(self, points: npt.ArrayLike) -> FloatArray:
        """Return points as a 2-D float array after checking their dimension.

        Args:
            points: One point (1-D) or one point per row (2-D).

        Returns:
            The points as an `(n, d)` array.

        Raises:
            DimensionMismatchError: If the dimension differs from the model's.
        """
        array = np.asarray(points, dtype=np.float64)
        if array.ndim == 1:
            array = array[np.newaxis, :]
        if array.ndim != 2 or array.shape[1] != self.d:
            raise DimensionMismatchError(
                f"Points of shape {array.shape} do not match dimension {self.d}"
            )
        return array


@dataclass(frozen=True)
class IcaModel(ContinuousEnergyModel):
    """The square Laplace-prior ICA family; parameters are the row-major filters.

    Attributes:
        d: The data dimension.
    """

    d: int
    layout: ParameterLayout = field(init=False)

    def __post_init__(self) -> None:
        """Derive the parameter layout."""
        object.__setattr__(self, "layout", ParameterLayout(((FILTERS_BLOCK, self.d**2),)))

    def filters(self, theta: npt.ArrayLike) -> FloatArray:
        """Reshape a parameter vector into the filter matrix.

        Args:
            theta: The flat parameter vector.

        Returns:
            The `d x d` filters.
        """
        return self.layout.check(theta).reshape(self.d, self.d)

    def energies(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute `sum_k |J_k x|` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            One energy per point.
        """
        return np.abs(points @ self.filters(theta).T).sum(axis=1)

    def grad_x(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute `sum_k sign(J_k x) J_k` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array of gradients.
        """
        filters = self.filters(theta)
        return np.sign(points @ filters.T) @ filters

    def param_grads(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute `sign(J_k x) x_l` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d * d)` array of gradients.
        """
        signs = np.sign(points @ self.filters(theta).T)
        return (signs[:, :, np.newaxis] * points[:, np.newaxis, :]).reshape(len(points), -1)

    def laplacian_x(self, points: FloatArray, theta: FloatArray) -> FloatArray | None:
        """Return the Laplacian, which is zero away from the kinks.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            Zeros, one per point.
        """
        self.layout.check(theta)
        return np.zeros(len(points))

    def score_terms(
        self, points: FloatArray, theta: FloatArray
    ) -> tuple[FloatArray, FloatArray] | None:
        """Compute `0.5 |grad E|^2` per point and its gradient in the filters.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            The per-point values and `(n, d * d)` gradients.
        """
        filters = self.filters(theta)
        signs = np.sign(points @ filters.T)
        grads = signs @ filters
        values = 0.5 * (grads**2).sum(axis=1)
        param = signs[:, :, np.newaxis] * grads[:, np.newaxis, :]
        return values, param.reshape(len(points), -1)


@dataclass(frozen=True)
class GaussianModel(ContinuousEnergyModel):
    """Quadratic energies `E(x) = 0.5 x^T A x` with a symmetric matrix `A`.

    The parameters are the upper triangle of `A`, diagonal included, in
    `numpy.triu_indices` order.

    Attributes:
        d: The data dimension.
    """

    d: int
    layout: ParameterLayout = field(init=False)

    def __post_init__(self) -> None:
        """Derive the parameter layout."""
        object.__setattr__(
            self, "layout", ParameterLayout(((PRECISION_BLOCK, self.d * (self.d + 1) // 2),))
        )

    def precision(self, theta: npt.ArrayLike) -> FloatArray:
        """Unpack a parameter vector into the symmetric matrix `A`.

        Args:
            theta: The flat parameter vector.

        Returns:
            The `d x d` matrix.
        """
        vector = self.layout.check(theta)
        matrix = np.zeros((self.d, self.d))
        i, j = np.triu_indices(self.d)
        matrix[i, j] = vector
        matrix[j, i] = vector
        return matrix

    def parameters(self, precision: npt.ArrayLike) -> FloatArray:
        """Pack a symmetric matrix into a parameter vector.

        Args:
            precision: The `d x d` matrix `A`.

        Returns:
            The flat parameter vector.
        """
        matrix = np.asarray(precision, dtype=np.float64)
        return matrix[np.triu_indices(self.d)].copy()

    def energies(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute `0.5 x^T A x` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            One energy per point.
        """
        return 0.5 * np.einsum("ni,ij,nj->n", points, self.precision(theta), points)

    def grad_x(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute `A x` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, d)` array of gradients.
        """
        return points @ self.precision(theta)

    def param_grads(self, points: FloatArray, theta: FloatArray) -> FloatArray:
        """Compute the energy gradient in the upper-triangle parameters.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            An `(n, n_params)` array of gradients.
        """
        self.layout.check(theta)
        i, j = np.triu_indices(self.d)
        products = points[:, i] * points[:, j]
        return np.where(i == j, 0.5, 1.0) * products

    def laplacian_x(self, points: FloatArray, theta: FloatArray) -> FloatArray | None:
        """Return the trace of `A` for every point.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            One Laplacian per point.
        """
        return np.full(len(points), np.trace(self.precision(theta)))

    def score_terms(
        self, points: FloatArray, theta: FloatArray
    ) -> tuple[FloatArray, FloatArray] | None:
        """Compute `0.5 |A x|^2 - tr A` per point and its parameter gradient.

        Args:
            points: One point per row.
            theta: The flat parameter vector.

        Returns:
            The per-point values and `(n, n_params)` gradients.
        """
        precision = self.precision(theta)
        grads = points @ precision
        values = 0.5 * (grads**2).sum(axis=1) - np.trace(precision)
        i, j = np.triu_indices(self.d)
        diagonal = i == j
        param = np.where(
            diagonal,
            grads[:, i] * points[:, j] - 1.0,
            grads[:, i] * points[:, j] + grads[:, j] * points[:, i],
        )
        return values, param
