"""Tests for transition matrices, chain products and block detection."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qmonitor.exceptions import (
    DimensionMismatch,
    StochasticityViolation,
    SymmetryViolation,
)
from qmonitor.transition import (
    TransitionMatrix,
    block_decompose,
    block_leakage,
    chain_product,
    fixed_point,
    limit_projector,
    matrix_power,
    power_deviation,
    propagator,
    spectrum_table,
    transition_matrix,
    two_level_min_eigenvalue,
    two_level_system,
)


def test_propagator_is_unitary(generic_system):
    system, _ = generic_system
    u = propagator(system.hamiltonian, 0.37)
    assert_allclose(u.conj().T @ u, np.eye(system.dim), atol=1e-12)


def test_transition_matrix_is_symmetric_doubly_stochastic(generic_system):
    system, _ = generic_system
    L = transition_matrix(system, 1.0)
    assert_allclose(L.matrix, L.matrix.T, atol=1e-12)
    assert_allclose(L.matrix.sum(axis=0), 1.0, atol=1e-12)
    assert_allclose(L.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert abs(L.spectrum[0] - 1.0) < 1e-10
    assert np.all(np.diff(L.spectrum) <= 1e-12)
    assert L.fixed_point_residual() < 1e-10


def test_two_level_spectral_formula(rng):
    """λ_min = 1 - 2 sin²φ sin²(ΔE τ/2) over random triples."""
    for _ in range(100):
        phi = rng.uniform(0.0, np.pi)
        gap = rng.uniform(0.1, 3.0)
        tau = rng.uniform(0.05, 5.0)
        L = transition_matrix(two_level_system(phi, gap), tau)
        assert abs(L.spectrum[-1] - two_level_min_eigenvalue(phi, gap, tau)) < 1e-10


def test_commuting_system_freezes(commuting_system):
    """[H, 𝒪] = 0 gives L = 𝕀 and an N-fold fixed point."""
    L = transition_matrix(commuting_system, 2.3)
    assert_allclose(L.matrix, np.eye(3), atol=1e-14)
    multiplicity, _ = fixed_point(L)
    assert multiplicity == 3
    assert power_deviation(L, 1000) < 1e-12


def test_generic_fixed_point_is_uniform(generic_system):
    system, _ = generic_system
    multiplicity, projector = fixed_point(transition_matrix(system, 1.0))
    assert multiplicity == 1
    assert_allclose(projector, np.full((4, 4), 0.25), atol=1e-10)


def test_parity_limit_of_a_swap():
    """At sinφ = 1 and τ = π/ΔE the qubit swaps outcomes every step."""
    L = transition_matrix(two_level_system(0.5 * np.pi, 1.0), np.pi)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert_allclose(L.matrix, swap, atol=1e-12)
    assert_allclose(matrix_power(L, 3), swap, atol=1e-12)
    assert_allclose(limit_projector(L, 3), swap, atol=1e-12)
    assert_allclose(limit_projector(L, 4), np.eye(2), atol=1e-12)


def test_chain_product_matches_power(generic_system):
    system, _ = generic_system
    L = transition_matrix(system, 0.9)
    assert_allclose(chain_product([L] * 5), matrix_power(L, 5), atol=1e-12)


def test_chain_product_order(generic_system):
    """The first factor acts first."""
    system, _ = generic_system
    a = transition_matrix(system, 0.4)
    b = transition_matrix(system, 1.3)
    assert_allclose(chain_product([a, b]), b.matrix @ a.matrix, atol=1e-14)


def test_chain_product_rejects_mixed_sizes(generic_system, small_system):
    a = transition_matrix(generic_system[0], 1.0)
    b = transition_matrix(small_system[0], 1.0)
    with pytest.raises(DimensionMismatch):
        chain_product([a, b])


def test_power_deviation_small_tau(generic_system):
    """The expm1 path agrees with the direct difference where both are accurate."""
    system, _ = generic_system
    L = transition_matrix(system, 0.05)
    direct = float(np.max(np.abs(matrix_power(L, 7) - np.eye(4))))
    assert power_deviation(L, 7) == pytest.approx(direct, rel=1e-6)


def test_from_matrix_rejects_non_stochastic():
    with pytest.raises(StochasticityViolation):
        TransitionMatrix.from_matrix(np.array([[0.5, 0.2], [0.5, 0.8]]), 1.0)
    with pytest.raises(StochasticityViolation):
        TransitionMatrix.from_matrix(np.array([[1.1, -0.1], [-0.1, 1.1]]), 1.0)


def test_from_matrix_rejects_asymmetric():
    cycle = np.roll(np.eye(3), 1, axis=0)
    with pytest.raises(SymmetryViolation):
        TransitionMatrix.from_matrix(cycle, 1.0)


def test_block_decompose_generic_is_one_block(generic_system):
    system, _ = generic_system
    assert block_decompose(system, [1.0]).sizes == [4]


def test_block_decompose_finds_blocks(block_system):
    system, _ = block_system
    blocks = block_decompose(system, [1.0])
    assert sorted(blocks.sizes) == [2, 3]
    L = transition_matrix(system, 1.0)
    assert block_leakage(matrix_power(L, 30), blocks) < 1e-12
    multiplicity, _ = fixed_point(L)
    assert multiplicity == 2


def test_spectrum_table_columns(generic_system):
    system, _ = generic_system
    matrices = [transition_matrix(system, t) for t in (0.5, 1.0)]
    table = spectrum_table(matrices, label=4)
    assert list(table.columns) == ["k", "lambda_k", "tau", "s_or_N"]
    assert len(table) == 8
    assert table.loc[table["k"] == 0, "lambda_k"].tolist() == pytest.approx([1.0, 1.0])


if __name__ == "__main__":
    pytest.main([__file__])
