# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Test the energy model module."""

import numpy as np
import pytest

from frequenz.mpf import (
    CouplingMatrix,
    DimensionMismatchError,
    DiscreteEnergyModel,
    GaussianModel,
    IcaModel,
    IcaParameters,
    IsingModel,
    ParameterLayout,
    Support,
    SupportKind,
    as_states,
    enumerate_distribution,
    enumerate_states,
    finite_diff_grad,
    flip,
    flip_energy_delta,
    ica_energy,
    ica_energy_grad_x,
    ica_param_grad,
    ising_energy,
    ising_param_grad,
    random_full_glass,
    random_lattice_glass,
)


class TestStates:
    """Testing the binary state helpers."""

    def test_single_state_becomes_a_row(self) -> None:
        """Test that a 1-D state is returned as a single row."""
        states = as_states([0, 1, 1])
        assert states.shape == (1, 3)
        assert states.dtype == np.int8

    def test_non_binary_entry_rejected(self) -> None:
        """Test that entries other than 0 and 1 are rejected."""
        with pytest.raises(ValueError):
            as_states([0, 2, 1])

    def test_dimension_checked(self) -> None:
        """Test that a wrong dimension raises a dimension mismatch."""
        with pytest.raises(DimensionMismatchError):
            as_states([[0, 1]], d=3)

    def test_flip_copies(self) -> None:
        """Test that flipping returns a copy with exactly one bit changed."""
        state = np.array([0, 1, 0], dtype=np.int8)
        flipped = flip(state, 1)
        assert flipped.tolist() == [0, 0, 0]
        assert state.tolist() == [0, 1, 0]


class TestSupport:
    """Testing the coupling support."""

    def test_lattice_edges(self) -> None:
        """Test the edges of a small open-boundary lattice."""
        support = Support.lattice(2, 3)
        assert support.d == 6
        assert support.kind is SupportKind.LATTICE
        assert support.shape == (2, 3)
        assert support.edges.tolist() == [
            [0, 1],
            [0, 3],
            [1, 2],
            [1, 4],
            [2, 5],
            [3, 4],
            [4, 5],
        ]

    def test_full_edge_count(self) -> None:
        """Test that the full support holds every unordered pair."""
        assert Support.full(5).n_edges == 10
        assert Support.full(1).n_edges == 0

    def test_from_edges_normalizes(self) -> None:
        """Test that any orientation and order is normalized."""
        support = Support.from_edges(4, [(3, 1), (0, 2), (1, 3)])
        assert support.edges.tolist() == [[0, 2], [1, 3]]
        assert support.kind is SupportKind.CUSTOM

    def test_invalid_edges_rejected(self) -> None:
        """Test that edges outside the dimension are rejected."""
        with pytest.raises(ValueError):
            Support(d=3, edges=np.array([[0, 3]]))
        with pytest.raises(ValueError):
            Support(d=3, edges=np.array([[1, 0]]))

    def test_neighbors(self) -> None:
        """Test the per-unit neighbor lists of a lattice."""
        support = Support.lattice(2, 2)
        units, edge_ids = support.neighbors[0]
        assert units.tolist() == [1, 2]
        assert support.edges[edge_ids].tolist() == [[0, 1], [0, 2]]


class TestIsingEnergy:
    """Testing the spin glass energy."""

    def test_energy_of_small_glass(self) -> None:
        """Test the energy `x^T J x` on a hand-computed case."""
        support = Support.full(2)
        coupling = CouplingMatrix(support, np.array([0.5]), np.array([1.0, -2.0]))
        assert ising_energy([1, 1], coupling) == pytest.approx(2 * 0.5 + 1.0 - 2.0)
        assert ising_energy([1, 0], coupling) == pytest.approx(1.0)
        assert ising_energy([0, 0], coupling) == 0.0

    def test_energy_matches_dense_quadratic_form(self) -> None:
        """Test that the energy equals `x^T J x` with the dense matrix."""
        coupling = random_full_glass(5, 1.0, seed=3)
        dense = coupling.full_matrix()
        for state in enumerate_states(5):
            x = state.astype(float)
            assert ising_energy(state, coupling) == pytest.approx(x @ dense @ x)

    def test_flip_delta_matches_energy_difference(self) -> None:
        """Test that the local flip delta equals the full energy difference."""
        coupling = random_lattice_glass(3, 3, 2.0, seed=1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            state = rng.integers(0, 2, size=9)
            k = int(rng.integers(0, 9))
            expected = ising_energy(flip(state, k), coupling) - ising_energy(state, coupling)
            assert flip_energy_delta(state, k, coupling) == pytest.approx(expected)

    def test_flip_delta_bad_index(self) -> None:
        """Test that an invalid bit index raises."""
        coupling = random_full_glass(3, 1.0, seed=0)
        with pytest.raises(IndexError):
            flip_energy_delta([0, 1, 0], 3, coupling)

    def test_random_glass_complement_symmetry(self) -> None:
        """Test that column-sum-zero biases make complements equally likely."""
        coupling = random_lattice_glass(2, 3, 10.0, seed=7)
        assert np.allclose(coupling.full_matrix().sum(axis=0), 0.0)
        for state in enumerate_states(6):
            assert ising_energy(1 - state, coupling) == pytest.approx(
                ising_energy(state, coupling)
            )

    @pytest.mark.parametrize(
        "coupling",
        [
            random_lattice_glass(3, 4, 4.0, seed=3),
            random_full_glass(8, 1.0, seed=4),
            random_full_glass(12, 0.5, seed=5),
        ],
    )
    def test_random_glass_marginals_are_half(self, coupling: CouplingMatrix) -> None:
        """Test that every unit is active with probability exactly one half.

        Args:
            coupling: A glass with column-sum-zero biases.
        """
        model = IsingModel(coupling.support)
        means, _ = enumerate_distribution(model, model.parameters(coupling)).moments()
        assert np.allclose(means, 0.5, rtol=0.0, atol=1e-12)

    def test_random_glass_is_seeded(self) -> None:
        """Test that the generator is deterministic given the seed."""
        first = random_full_glass(4, 1.0, seed=5)
        second = random_full_glass(4, 1.0, seed=5)
        other = random_full_glass(4, 1.0, seed=6)
        assert np.array_equal(first.offdiag, second.offdiag)
        assert not np.array_equal(first.offdiag, other.offdiag)

    def test_coupling_shape_checked(self) -> None:
        """Test that parameters must match the support."""
        with pytest.raises(DimensionMismatchError):
            CouplingMatrix(Support.full(3), np.zeros(2), np.zeros(3))

    def test_param_grad(self) -> None:
        """Test the parameter gradient against finite differences."""
        coupling = random_full_glass(4, 1.0, seed=2)
        model = IsingModel(coupling.support)
        state = np.array([1, 0, 1, 1], dtype=np.int8)
        theta = model.parameters(coupling)
        numeric = finite_diff_grad(
            lambda t: ising_energy(state, model.coupling(t)), theta
        )
        assert np.allclose(ising_param_grad(state, coupling), numeric, atol=1e-8)


class TestIsingModel:
    """Testing the Ising model family."""

    def test_parameter_round_trip(self) -> None:
        """Test that packing and unpacking preserve the glass."""
        coupling = random_lattice_glass(2, 2, 1.0, seed=0)
        model = IsingModel(coupling.support)
        unpacked = model.coupling(model.parameters(coupling))
        assert np.array_equal(unpacked.offdiag, coupling.offdiag)
        assert np.array_equal(unpacked.diag, coupling.diag)

    def test_foreign_support_rejected(self) -> None:
        """Test that a glass on another support cannot be packed."""
        model = IsingModel(Support.lattice(2, 2))
        with pytest.raises(DimensionMismatchError):
            model.parameters(random_full_glass(4, 1.0, seed=0))

    def test_batched_energies(self) -> None:
        """Test that batched energies match the single-state energy."""
        coupling = random_full_glass(4, 1.0, seed=4)
        model = IsingModel(coupling.support)
        states = enumerate_states(4)
        energies = model.energies(states, model.parameters(coupling))
        assert np.allclose(energies, [ising_energy(s, coupling) for s in states])

    def test_vectorized_flips_match_generic(self) -> None:
        """Test the closed-form flip deltas and contraction against the generic ones."""
        coupling = random_full_glass(5, 2.0, seed=9)
        model = IsingModel(coupling.support)
        theta = model.parameters(coupling)
        rng = np.random.default_rng(1)
        states = rng.integers(0, 2, size=(7, 5)).astype(np.int8)
        coefficients = rng.normal(size=(7, 5))
        assert np.allclose(
            model.flip_deltas(states, theta),
            DiscreteEnergyModel.flip_deltas(model, states, theta),
        )
        assert np.allclose(
            model.flip_grad_contraction(states, coefficients, theta),
            DiscreteEnergyModel.flip_grad_contraction(model, states, coefficients, theta),
        )


class TestParameterLayout:
    """Testing the flat parameter layout."""

    def test_pack_unpack(self) -> None:
        """Test that blocks are concatenated in order."""
        layout = ParameterLayout((("a", 2), ("b", 1)))
        theta = layout.pack(b=[3.0], a=[1.0, 2.0])
        assert theta.tolist() == [1.0, 2.0, 3.0]
        assert layout.unpack(theta)["b"].tolist() == [3.0]
        assert layout.block("b") == slice(2, 3)

    def test_wrong_lengths_rejected(self) -> None:
        """Test that wrong block or vector lengths raise."""
        layout = ParameterLayout((("a", 2),))
        with pytest.raises(DimensionMismatchError):
            layout.pack(a=[1.0])
        with pytest.raises(DimensionMismatchError):
            layout.check(np.zeros(3))

    def test_duplicate_names_rejected(self) -> None:
        """Test that block names must be unique."""
        with pytest.raises(ValueError):
            ParameterLayout((("a", 1), ("a", 2)))


class TestIca:
    """Testing the Laplace ICA energy."""

    def test_energy(self) -> None:
        """Test the energy on a hand-computed case."""
        params = IcaParameters(np.array([[1.0, 2.0], [0.0, -1.0]]))
        assert ica_energy([1.0, 1.0], params) == pytest.approx(3.0 + 1.0)

    def test_non_square_filters_rejected(self) -> None:
        """Test that the filter matrix must be square."""
        with pytest.raises(DimensionMismatchError):
            IcaParameters(np.zeros((2, 3)))

    def test_gradients(self) -> None:
        """Test both gradients against finite differences away from the kinks."""
        rng = np.random.default_rng(0)
        filters = rng.normal(size=(3, 3))
        x = rng.normal(size=3)
        params = IcaParameters(filters)
        numeric_x = finite_diff_grad(lambda v: ica_energy(v, params), x, 1e-6)
        numeric_theta = finite_diff_grad(
            lambda t: ica_energy(x, IcaParameters(t.reshape(3, 3))), filters.ravel(), 1e-6
        )
        assert np.allclose(ica_energy_grad_x(x, params), numeric_x, atol=1e-6)
        assert np.allclose(ica_param_grad(x, params), numeric_theta, atol=1e-6)

    def test_model_matches_functions(self) -> None:
        """Test that the batched model agrees with the single-point functions."""
        rng = np.random.default_rng(2)
        model = IcaModel(3)
        theta = rng.normal(size=9)
        points = rng.normal(size=(4, 3))
        params = IcaParameters(theta.reshape(3, 3))
        assert np.allclose(model.energies(points, theta), [ica_energy(p, params) for p in points])
        assert np.allclose(
            model.grad_x(points, theta), [ica_energy_grad_x(p, params) for p in points]
        )
        assert np.allclose(
            model.param_grads(points, theta), [ica_param_grad(p, params) for p in points]
        )

    def test_points_dimension_checked(self) -> None:
        """Test that points of the wrong dimension raise."""
        with pytest.raises(DimensionMismatchError):
            IcaModel(3).check_points(np.zeros((2, 2)))


class TestGaussianModel:
    """Testing the quadratic energy family."""

    def test_score_terms(self) -> None:
        """Test the closed-form score terms against finite differences."""
        model = GaussianModel(2)
        precision = np.array([[2.0, 0.3], [0.3, 1.5]])
        theta = model.parameters(precision)
        points = np.array([[0.5, -1.0], [1.2, 0.4]])
        values, grads = model.score_terms(points, theta)  # type: ignore[misc]
        expected = 0.5 * ((points @ precision) ** 2).sum(axis=1) - np.trace(precision)
        assert np.allclose(values, expected)
        numeric = finite_diff_grad(
            lambda t: float(model.score_terms(points, t)[0].sum()),  # type: ignore[index]
            theta,
        )
        assert np.allclose(grads.sum(axis=0), numeric, atol=1e-6)

    def test_param_grads(self) -> None:
        """Test the energy parameter gradient against finite differences."""
        model = GaussianModel(3)
        rng = np.random.default_rng(3)
        theta = rng.normal(size=model.layout.size)
        point = rng.normal(size=(1, 3))
        numeric = finite_diff_grad(lambda t: float(model.energies(point, t)[0]), theta)
        assert np.allclose(model.param_grads(point, theta)[0], numeric, atol=1e-8)
