"""
# Implements: qmonitor:Transition
# Description: Unistochastic transition matrices, their products and fixed points
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    ConvergenceFailure,
    DimensionMismatch,
    StochasticityViolation,
    SymmetryViolation,
)
from .hilbert import BlockStructure, HermitianOperator, QuantumSystem
from .settings import SUPPORT_SAMPLE_COUNT, SUPPORT_SAMPLE_SEED, TOL

logger = logging.getLogger(__name__)

__all__ = [
    "BlockStructure",
    "TransitionMatrix",
    "block_decompose",
    "block_leakage",
    "chain_product",
    "fixed_point",
    "limit_projector",
    "matrix_power",
    "minus_one_projector",
    "power_deviation",
    "propagator",
    "spectrum_table",
    "transition_matrix",
    "two_level_min_eigenvalue",
    "two_level_system",
]


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Symmetric doubly stochastic L(τ) with its descending spectrum."""

    dim: int
    tau: float
    matrix: np.ndarray
    spectrum: np.ndarray
    eigenbasis: np.ndarray

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, tau: float) -> "TransitionMatrix":
        """Validate a candidate L and attach its symmetric eigendecomposition.

        Raises:
            StochasticityViolation: row or column sums off by more than ε_stoch
            SymmetryViolation: L differs from its transpose by more than ε_sym
        """
        matrix = np.array(matrix, dtype=float)
        dim = matrix.shape[0]
        if matrix.shape != (dim, dim):
            raise DimensionMismatch(
                f"transition matrix must be square, got {matrix.shape}"
            )
        lowest = float(matrix.min())
        if lowest < -TOL.neg:
            raise StochasticityViolation(f"negative transition weight {lowest:.3e}")
        matrix = np.clip(matrix, 0.0, None)

        row_error = float(np.max(np.abs(matrix.sum(axis=1) - 1.0)))
        col_error = float(np.max(np.abs(matrix.sum(axis=0) - 1.0)))
        if max(row_error, col_error) > TOL.stoch:
            raise StochasticityViolation(
                f"row/column sums deviate by {max(row_error, col_error):.3e}",
                {"row_error": row_error, "col_error": col_error, "tau": tau},
            )
        asymmetry = float(np.max(np.abs(matrix - matrix.T)))
        if asymmetry > TOL.sym:
            raise SymmetryViolation(
                f"transition matrix asymmetric by {asymmetry:.3e}",
                {"asymmetry": asymmetry, "tau": tau},
            )

        try:
            values, vectors = scipy.linalg.eigh(0.5 * (matrix + matrix.T))
        except (np.linalg.LinAlgError, ValueError) as e:
            raise ConvergenceFailure(f"eigensolver failed for L(τ={tau}): {e}") from e
        values = values[::-1]
        vectors = vectors[:, ::-1]
        if values[0] > 1 + TOL.eig or values[-1] < -1 - TOL.eig:
            raise ConvergenceFailure(f"spectrum of L leaves [-1, 1]: {values[[0, -1]]}")
        if abs(values[0] - 1.0) > TOL.eig:
            raise ConvergenceFailure(f"top eigenvalue {values[0]!r} is not 1")

        for array in (matrix, values, vectors):
            array.setflags(write=False)
        return cls(
            dim=dim, tau=float(tau), matrix=matrix, spectrum=values, eigenbasis=vectors
        )

    def fixed_point_residual(self) -> float:
        v = np.full(self.dim, 1.0 / np.sqrt(self.dim))
        return float(np.linalg.norm(self.matrix @ v - v))

    @property
    def gap(self) -> float:
        """Largest modulus among the eigenvalues strictly inside the unit circle."""
        inner = np.abs(self.spectrum)
        inner = inner[inner < 1.0 - TOL.deg_relative]
        return float(inner.max()) if inner.size else 0.0


def propagator(hamiltonian: HermitianOperator, tau: float) -> np.ndarray:
    """U(τ) = e^{-iHτ} in the basis the Hamiltonian matrix is written in."""
    phases = np.exp(-1j * hamiltonian.eigenvalues * tau)
    return hamiltonian.apply_function(phases)


def observable_propagator(system: QuantumSystem, tau: float) -> np.ndarray:
    """⟨α_k|U(τ)|α_ℓ⟩ assembled from the overlap matrix."""
    phases = np.exp(-1j * system.energies * tau)
    return (system.overlap * phases) @ system.overlap.conj().T


def transition_matrix(system: QuantumSystem, tau: float) -> TransitionMatrix:
    """L_{k,ℓ}(τ) = |⟨α_k|U(τ)|α_ℓ⟩|²."""
    if not np.isfinite(tau):
        raise ValueError(f"waiting time must be finite, got {tau!r}")
    u = observable_propagator(system, tau)
    result = TransitionMatrix.from_matrix(np.abs(u) ** 2, tau)
    residual = result.fixed_point_residual()
    if residual > TOL.fix:
        logger.warning("uniform vector residual %.3e at tau=%g", residual, tau)
    return result


def _check_dims(matrices: Sequence[TransitionMatrix]) -> int:
    if not matrices:
        raise ValueError("at least one transition matrix is required")
    dims = {m.dim for m in matrices}
    if len(dims) != 1:
        raise DimensionMismatch(
            f"transition matrices of different sizes: {sorted(dims)}"
        )
    return dims.pop()


def matrix_power(L: TransitionMatrix, M: int) -> np.ndarray:
    """L^M = W diag(λ^M) Wᵀ."""
    if M < 0:
        raise ValueError(f"power must be non-negative, got {M}")
    return (L.eigenbasis * L.spectrum ** M) @ L.eigenbasis.T


def power_deviation(
    L: TransitionMatrix, M: int, target: Optional[np.ndarray] = None
) -> float:
    """Max-norm of L^M - target, with the identity as default target.

    Against the identity the difference is assembled from expm1(M log λ),
    which keeps relative accuracy when L^M is within round-off of 𝕀.
    """
    if target is not None:
        return float(np.max(np.abs(matrix_power(L, M) - target)))
    values = L.spectrum
    shifted = np.empty_like(values)
    positive = values > 0
    shifted[positive] = np.expm1(M * np.log(values[positive]))
    shifted[~positive] = values[~positive] ** M - 1.0
    return float(np.max(np.abs((L.eigenbasis * shifted) @ L.eigenbasis.T)))


def chain_product(matrices: Sequence[TransitionMatrix]) -> np.ndarray:
    """Ordered product L(τ_{M-1})⋯L(τ_1), first factor applied first.

    Accumulated stochasticity drift is logged, never renormalized away.
    """
    dim = _check_dims(matrices)
    first = matrices[0]
    if all(m is first or np.array_equal(m.matrix, first.matrix) for m in matrices[1:]):
        product = matrix_power(first, len(matrices))
    else:
        product = np.eye(dim)
        for factor in matrices:
            product = factor.matrix @ product

    drift = max(
        float(np.max(np.abs(product.sum(axis=0) - 1.0))),
        float(np.max(np.abs(product.sum(axis=1) - 1.0))),
    )
    budget = len(matrices) * TOL.stoch
    if drift > budget:
        logger.warning(
            "chain product of %d factors drifted %.3e from stochastic (budget %.1e)",
            len(matrices),
            drift,
            budget,
        )
    return product


def _projector_onto(L: TransitionMatrix, target: float) -> Tuple[int, np.ndarray]:
    selected = np.abs(L.spectrum - target) <= TOL.deg_relative
    vectors = L.eigenbasis[:, selected]
    return int(selected.sum()), vectors @ vectors.T


def fixed_point(L: TransitionMatrix) -> Tuple[int, np.ndarray]:
    """Multiplicity of λ = 1 and the projector onto its eigenspace."""
    return _projector_onto(L, 1.0)


def minus_one_projector(L: TransitionMatrix) -> Tuple[int, np.ndarray]:
    """Multiplicity of λ = -1 and the projector onto its eigenspace."""
    return _projector_onto(L, -1.0)


def limit_projector(L: TransitionMatrix, M: int) -> np.ndarray:
    """Large-M limit of L^M: 𝒫_{λ=1} + (-1)^M 𝒫_{λ=-1}."""
    _, plus = fixed_point(L)
    _, minus = minus_one_projector(L)
    return plus + (-1) ** M * minus


def _support_taus(taus: Iterable[float]) -> List[float]:
    rng = np.random.default_rng(SUPPORT_SAMPLE_SEED)
    extra = rng.uniform(0.1, 3.0, size=SUPPORT_SAMPLE_COUNT)
    return [float(t) for t in taus] + extra.tolist()


def block_decompose(system: QuantumSystem, taus: Sequence[float]) -> BlockStructure:
    """Invariant subspaces of H and 𝒪 from the support graph of L(τ).

    Two observable indices are linked when some sampled L(τ) connects them
    above ε_supp. Seeded extra times are added to the given ones so that
    accidental zeros at special τ do not split a block.
    """
    if len(taus) == 0:
        raise ValueError("block_decompose needs at least one waiting time")
    support = np.zeros((system.dim, system.dim))
    for tau in _support_taus(taus):
        support = np.maximum(support, np.abs(observable_propagator(system, tau)) ** 2)
    adjacency = csr_matrix(support > TOL.supp)
    n_blocks, labels = connected_components(adjacency, directed=False)
    partition = [np.flatnonzero(labels == r).tolist() for r in range(n_blocks)]
    blocks = BlockStructure.from_partition(
        partition, system.hamiltonian_in_observable_basis()
    )
    logger.debug("support graph: %d blocks of sizes %s", blocks.n_blocks, blocks.sizes)
    return blocks


def block_leakage(matrix: np.ndarray, blocks: BlockStructure) -> float:
    """Largest entry of ``matrix`` connecting two different blocks."""
    labels = blocks.membership()
    off_block = labels[:, None] != labels[None, :]
    if not off_block.any():
        return 0.0
    return float(np.max(np.abs(matrix[off_block])))


def two_level_system(phi: float, gap: float) -> QuantumSystem:
    """Qubit with energy gap ΔE whose observable basis is rotated by φ/2.

    With this convention the smallest eigenvalue of L(τ) is
    1 - 2 sin²φ sin²(ΔE τ/2).
    """
    if gap <= 0:
        raise ValueError(f"energy gap must be positive, got {gap}")
    c, s = np.cos(phi / 2), np.sin(phi / 2)
    rotation = np.array([[c, -s], [s, c]])
    observable = rotation @ np.diag([0.0, 1.0]) @ rotation.T
    return QuantumSystem.from_matrices(np.diag([0.0, gap]), observable)


def two_level_min_eigenvalue(phi: float, gap: float, tau: float) -> float:
    return 1.0 - 2.0 * np.sin(phi) ** 2 * np.sin(gap * tau / 2) ** 2


def spectrum_table(matrices: Sequence[TransitionMatrix], label: float) -> pd.DataFrame:
    """Rows (k, lambda_k, tau, s_or_N) for each matrix, k = 0 at λ = 1."""
    frames = [
        pd.DataFrame(
            {
                "k": np.arange(L.dim),
                "lambda_k": L.spectrum,
                "tau": L.tau,
                "s_or_N": label,
            }
        )
        for L in matrices
    ]
    return pd.concat(frames, ignore_index=True)
