"""
# Implements: qmonitor:Hilbert
# Description: Hamiltonians, observables, spin operators and initial states

All operators are dense. Matrices handed out by the value types below are
read-only so the values can be shared between threads.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .exceptions import (
    ConvergenceFailure,
    InvalidSpin,
    InvalidTruncation,
    NotHermitian,
)
from .settings import TOL

logger = logging.getLogger(__name__)

SpinLabel = Union[int, float, Fraction]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _max_abs(array: np.ndarray) -> float:
    return float(np.max(np.abs(array))) if array.size else 0.0


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Hermitian matrix together with its ascending spectral decomposition."""

    dim: int
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: Tuple[Tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix.astype(complex)))
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues.astype(float)))
        object.__setattr__(
            self, "eigenvectors", _frozen(self.eigenvectors.astype(complex))
        )
        if self.matrix.shape != (self.dim, self.dim):
            raise ValueError(f"matrix shape {self.matrix.shape} != dim {self.dim}")
        if _max_abs(self.matrix - self.matrix.conj().T) > TOL.herm:
            raise NotHermitian("operator is not Hermitian")
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ConvergenceFailure("eigenvalues are not sorted ascending")
        gram = self.eigenvectors.conj().T @ self.eigenvectors
        if _max_abs(gram - np.eye(self.dim)) > TOL.orth:
            raise ConvergenceFailure("eigenvectors are not orthonormal")
        scale = max(1.0, _max_abs(self.matrix))
        if _max_abs(self.reconstruct() - self.matrix) > TOL.recon * scale:
            raise ConvergenceFailure("spectral reconstruction failed")

    @classmethod
    def from_eigensystem(
        cls, eigenvalues: np.ndarray, eigenvectors: np.ndarray
    ) -> "HermitianOperator":
        """Build an operator from eigen data given in any order."""
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        eigenvectors = np.asarray(eigenvectors, dtype=complex)
        order = np.argsort(eigenvalues, kind="stable")
        eigenvalues = eigenvalues[order]
        eigenvectors = eigenvectors[:, order]
        matrix = (eigenvectors * eigenvalues) @ eigenvectors.conj().T
        matrix = 0.5 * (matrix + matrix.conj().T)
        return cls(
            dim=len(eigenvalues),
            matrix=matrix,
            eigenvalues=eigenvalues,
            eigenvectors=eigenvectors,
            clusters=_degenerate_clusters(eigenvalues),
        )

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T

    def apply_function(self, values: np.ndarray) -> np.ndarray:
        """Return V diag(values) V† for values given on the spectrum."""
        return (self.eigenvectors * values) @ self.eigenvectors.conj().T

    def in_basis(self, basis: np.ndarray) -> np.ndarray:
        """Matrix elements ⟨b_k|A|b_l⟩ for orthonormal columns b."""
        return basis.conj().T @ self.matrix @ basis

    @property
    def spread(self) -> float:
        return float(self.eigenvalues[-1] - self.eigenvalues[0])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Positive semidefinite, unit-trace Hermitian matrix."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", _frozen(matrix))
        if matrix.shape != (self.dim, self.dim):
            raise ValueError(f"density matrix shape {matrix.shape} != {self.dim}")
        if _max_abs(matrix - matrix.conj().T) > TOL.herm:
            raise NotHermitian("density matrix is not Hermitian")
        trace = np.trace(matrix).real
        if abs(trace - 1.0) > TOL.trace:
            raise ValueError(f"density matrix trace {trace!r} != 1")
        lowest = float(np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))[0])
        if lowest < -TOL.psd:
            raise ValueError(f"density matrix has negative eigenvalue {lowest}")

    @classmethod
    def from_weights(cls, weights: np.ndarray, basis: np.ndarray) -> "DensityMatrix":
        """Mixture Σ w_k |b_k⟩⟨b_k| with weights renormalized to one."""
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
        matrix = (basis * weights) @ basis.conj().T
        return cls(dim=len(weights), matrix=0.5 * (matrix + matrix.conj().T))

    def populations(self, basis: np.ndarray) -> np.ndarray:
        """Diagonal ⟨b_k|ρ|b_k⟩ in the orthonormal basis given by columns."""
        values = np.einsum("ik,ij,jk->k", basis.conj(), self.matrix, basis).real
        return np.clip(values, 0.0, None)


@dataclass(frozen=True, eq=False)
class QuantumSystem:
    """Hamiltonian and monitored observable with their overlap matrix."""

    hamiltonian: HermitianOperator
    observable: HermitianOperator
    overlap: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.hamiltonian.dim != self.observable.dim:
            raise ValueError("Hamiltonian and observable dimensions differ")
        overlap = self.overlap
        if overlap is None:
            observable_basis = self.observable.eigenvectors.conj().T
            overlap = observable_basis @ self.hamiltonian.eigenvectors
        object.__setattr__(self, "overlap", _frozen(overlap))
        gram = self.overlap.conj().T @ self.overlap
        if _max_abs(gram - np.eye(self.dim)) > TOL.orth:
            raise ConvergenceFailure("overlap matrix is not unitary")

    @classmethod
    def from_matrices(
        cls, hamiltonian: np.ndarray, observable: np.ndarray
    ) -> "QuantumSystem":
        """Diagonalize H and 𝒪 given in a common basis."""
        return cls(
            hamiltonian=spectral_decompose(hamiltonian),
            observable=spectral_decompose(observable),
        )

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @property
    def energies(self) -> np.ndarray:
        return self.hamiltonian.eigenvalues

    @property
    def born_table(self) -> np.ndarray:
        """|⟨α_k|E_ℓ⟩|² indexed [k, ℓ]; columns and rows sum to one."""
        return np.abs(self.overlap) ** 2

    def hamiltonian_in_observable_basis(self) -> np.ndarray:
        return self.hamiltonian.in_basis(self.observable.eigenvectors)

    def commutator_norm(self) -> float:
        h = self.hamiltonian.matrix
        o = self.observable.matrix
        return _max_abs(h @ o - o @ h)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.hamiltonian.matrix).tobytes())
        digest.update(np.ascontiguousarray(self.observable.matrix).tobytes())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class SpinParameters:
    """Spin-s magnet monitored along a tilted axis."""

    s: SpinLabel
    omega: float = 1.0
    xi: float = 0.5 * np.pi
    scaled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "s", validate_spin(self.s))

    @property
    def dim(self) -> int:
        return int(2 * self.s) + 1


@dataclass(frozen=True, eq=False)
class BlockStructure:
    """Partition of observable-basis indices into invariant subspaces S_r."""

    partition: Tuple[Tuple[int, ...], ...]
    block_hamiltonians: Tuple[HermitianOperator, ...]

    def __post_init__(self):
        flat = sorted(i for block in self.partition for i in block)
        if flat != list(range(len(flat))):
            raise ValueError("blocks must be disjoint and cover every index")
        if len(self.block_hamiltonians) != len(self.partition):
            raise ValueError("one block Hamiltonian per block is required")

    @property
    def dim(self) -> int:
        return sum(len(block) for block in self.partition)

    @property
    def n_blocks(self) -> int:
        return len(self.partition)

    @property
    def sizes(self) -> List[int]:
        return [len(block) for block in self.partition]

    def membership(self) -> np.ndarray:
        """Block label r of every observable-basis index."""
        labels = np.empty(self.dim, dtype=int)
        for r, block in enumerate(self.partition):
            labels[list(block)] = r
        return labels

    @classmethod
    def from_partition(
        cls, partition: Sequence[Sequence[int]], h_observable_basis: np.ndarray
    ) -> "BlockStructure":
        """Attach restricted Hamiltonians H_r to a partition."""
        blocks = tuple(
            tuple(sorted(int(i) for i in block))
            for block in sorted(partition, key=lambda b: min(b))
        )
        hamiltonians = tuple(
            spectral_decompose(h_observable_basis[np.ix_(block, block)])
            for block in blocks
        )
        return cls(partition=blocks, block_hamiltonians=hamiltonians)


def _degenerate_clusters(eigenvalues: np.ndarray) -> Tuple[Tuple[int, ...], ...]:
    if len(eigenvalues) == 0:
        return ()
    spread = float(eigenvalues[-1] - eigenvalues[0])
    scale = spread if spread > 0 else max(1.0, float(np.max(np.abs(eigenvalues))))
    tol = TOL.deg_relative * scale
    clusters: List[Tuple[int, ...]] = []
    current = [0]
    for i in range(1, len(eigenvalues)):
        if eigenvalues[i] - eigenvalues[current[-1]] <= tol:
            current.append(i)
        else:
            clusters.append(tuple(current))
            current = [i]
    clusters.append(tuple(current))
    return tuple(clusters)


def spectral_decompose(op: np.ndarray) -> HermitianOperator:
    """Diagonalize a Hermitian matrix.

    Eigenvalues come out ascending; eigenvectors inside a degenerate cluster
    are re-orthogonalized so the columns stay orthonormal to tolerance.

    Raises:
        NotHermitian: if ``op`` deviates from its adjoint beyond ε_herm
        ConvergenceFailure: if the eigensolver fails
    """
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {op.shape}")
    asymmetry = _max_abs(op - op.conj().T)
    if asymmetry > TOL.herm:
        raise NotHermitian(
            f"matrix deviates from its adjoint by {asymmetry:.3e}",
            {"asymmetry": asymmetry},
        )
    op = 0.5 * (op + op.conj().T)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(op)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ConvergenceFailure(f"eigensolver failed: {e}") from e

    clusters = _degenerate_clusters(eigenvalues)
    for cluster in clusters:
        if len(cluster) > 1:
            idx = list(cluster)
            q, _ = np.linalg.qr(eigenvectors[:, idx])
            eigenvectors[:, idx] = q
    logger.debug(
        "diagonalized %dx%d operator, %d degenerate clusters",
        op.shape[0],
        op.shape[0],
        sum(1 for c in clusters if len(c) > 1),
    )
    return HermitianOperator(
        dim=op.shape[0],
        matrix=op,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        clusters=clusters,
    )


def validate_spin(s: SpinLabel) -> Fraction:
    """Return s as an exact half-integer, rejecting anything else."""
    try:
        two_s = None if isinstance(s, bool) else Fraction(s).limit_denominator(2) * 2
    except (TypeError, ValueError) as e:
        raise InvalidSpin(f"invalid spin {s!r}") from e
    if two_s is None or two_s.denominator != 1 or two_s < 1:
        raise InvalidSpin(f"2s must be a positive integer, got s={s!r}")
    if abs(float(two_s) / 2 - float(s)) > 1e-12:
        raise InvalidSpin(f"s={s!r} is not a half-integer")
    return two_s / 2


def spin_matrices(s: SpinLabel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw (S_x, S_y, S_z) in the S_z basis ordered m = s, s-1, ..., -s."""
    s = float(validate_spin(s))
    m = np.arange(s, -s - 1, -1)
    # ⟨m+1|S_+|m⟩ sits above the diagonal in the descending-m ordering
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    s_plus = np.diag(ladder, 1).astype(complex)
    s_x = 0.5 * (s_plus + s_plus.conj().T)
    s_y = -0.5j * (s_plus - s_plus.conj().T)
    s_z = np.diag(m).astype(complex)
    return s_x, s_y, s_z


def spin_operators(
    s: SpinLabel,
) -> Tuple[HermitianOperator, HermitianOperator, HermitianOperator]:
    """Angular-momentum operators of spin s as HermitianOperators."""
    s_x, s_y, s_z = spin_matrices(s)
    return spectral_decompose(s_x), spectral_decompose(s_y), spectral_decompose(s_z)


def tilted_observable(params: SpinParameters) -> HermitianOperator:
    """𝒪 = sin(ξ) S_x + cos(ξ) S_z."""
    s_x, _, s_z = spin_matrices(params.s)
    return spectral_decompose(np.sin(params.xi) * s_x + np.cos(params.xi) * s_z)


def spin_system(params: SpinParameters) -> QuantumSystem:
    """Spin magnet H = -ωS_z (or -S_z/s when scaled) with tilted 𝒪."""
    _, _, s_z = spin_matrices(params.s)
    if params.scaled:
        hamiltonian = -s_z / float(params.s)
    else:
        hamiltonian = -params.omega * s_z
    return QuantumSystem(
        hamiltonian=spectral_decompose(hamiltonian),
        observable=tilted_observable(params),
    )


def thermal_state(hamiltonian: HermitianOperator, beta: float) -> DensityMatrix:
    """Gibbs state e^{-βH}/Z evaluated with max-shifted exponents."""
    if not np.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta!r}")
    exponents = -beta * hamiltonian.eigenvalues
    weights = np.exp(exponents - exponents.max())
    return DensityMatrix.from_weights(weights, hamiltonian.eigenvectors)


def random_density_matrix(dim: int, rng: np.random.Generator) -> DensityMatrix:
    """Full-rank ρ = GG†/Tr(GG†) with complex Gaussian G."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(dim=dim, matrix=rho / np.trace(rho).real)


def random_system(dim: int, seed: int) -> Tuple[QuantumSystem, DensityMatrix]:
    """Random system written in the eigenbasis of 𝒪.

    𝒪 = diag(0, 1, ..., N-1). H has independent Gaussian entries,
    symmetrized; it is drawn real so the transition matrices are symmetric.
    """
    if dim < 2:
        raise ValueError(f"random systems need N >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim))
    hamiltonian = 0.5 * (a + a.T)
    observable = np.diag(np.arange(dim, dtype=float))
    rho0 = random_density_matrix(dim, rng)
    system = QuantumSystem.from_matrices(hamiltonian, observable)
    logger.debug("random system N=%d seed=%d", dim, seed)
    return system, rho0


def block_diagonal_system(
    block_sizes: Sequence[int], seed: int, shuffle: bool = True
) -> Tuple[QuantumSystem, DensityMatrix]:
    """Random H made of irreducible real blocks in the eigenbasis of 𝒪.

    With ``shuffle`` the observable labels are permuted so that blocks are
    not contiguous in the outcome ordering.
    """
    rng = np.random.default_rng(seed)
    dim = int(sum(block_sizes))
    hamiltonian = np.zeros((dim, dim))
    start = 0
    for size in block_sizes:
        a = rng.normal(size=(size, size))
        block = 0.5 * (a + a.T)
        # couplings of at least 1/2 keep every block irreducible
        off = ~np.eye(size, dtype=bool)
        block[off] = np.where(
            np.abs(block[off]) < 0.5, np.copysign(0.5, block[off]), block[off]
        )
        hamiltonian[start : start + size, start : start + size] = block
        start += size
    if shuffle:
        perm = rng.permutation(dim)
        hamiltonian = hamiltonian[np.ix_(perm, perm)]
    observable = np.diag(np.arange(dim, dtype=float))
    rho0 = random_density_matrix(dim, rng)
    return QuantumSystem.from_matrices(hamiltonian, observable), rho0


def oscillator_basis(n_max: int) -> List[Tuple[int, int]]:
    """States |n_x, n_y⟩ with n_x + n_y <= n_max, grouped by n."""
    return [(n - k, k) for n in range(n_max + 1) for k in range(n + 1)]


def oscillator_system(
    n_max: int, omega1: float, omega2: float, zero_point: bool = True
) -> Tuple[QuantumSystem, BlockStructure]:
    """Anisotropic 2D oscillator monitored through L̃ = (i/2)(a_x†a_y - a_y†a_x).

    The truncation keeps every state with at most ``n_max`` quanta, so each
    sector of fixed n = n_x + n_y survives whole. L̃ is diagonalized sector by
    sector, which keeps its eigenvectors inside one sector even where
    eigenvalues of different sectors coincide.
    """
    if n_max < 1:
        raise InvalidTruncation(f"n_max must be >= 1, got {n_max}")
    if omega1 <= 0 or omega2 <= 0:
        raise ValueError("oscillator frequencies must be positive")

    states = oscillator_basis(n_max)
    index = {state: i for i, state in enumerate(states)}
    dim = len(states)

    energies = np.array([omega1 * nx + omega2 * ny for nx, ny in states], dtype=float)
    if zero_point:
        energies = energies + 0.5 * (omega1 + omega2)

    l_tilde = np.zeros((dim, dim), dtype=complex)
    for (nx, ny), col in index.items():
        if ny > 0:
            # a_x† a_y |nx, ny⟩ = sqrt((nx+1) ny) |nx+1, ny-1⟩
            l_tilde[index[(nx + 1, ny - 1)], col] += 0.5j * np.sqrt((nx + 1) * ny)
        if nx > 0:
            # a_y† a_x |nx, ny⟩ = sqrt(nx (ny+1)) |nx-1, ny+1⟩
            l_tilde[index[(nx - 1, ny + 1)], col] -= 0.5j * np.sqrt(nx * (ny + 1))

    eigenvalues = np.empty(dim)
    eigenvectors = np.zeros((dim, dim), dtype=complex)
    sector_of = np.empty(dim, dtype=int)
    for n in range(n_max + 1):
        members = [index[(n - k, k)] for k in range(n + 1)]
        sector = spectral_decompose(l_tilde[np.ix_(members, members)])
        eigenvalues[members] = sector.eigenvalues
        eigenvectors[np.ix_(members, members)] = sector.eigenvectors
        sector_of[members] = n

    # ascending outcomes, ties broken by sector
    order = np.lexsort((sector_of, eigenvalues))
    observable = HermitianOperator(
        dim=dim,
        matrix=l_tilde,
        eigenvalues=eigenvalues[order],
        eigenvectors=eigenvectors[:, order],
        clusters=_degenerate_clusters(eigenvalues[order]),
    )
    hamiltonian = HermitianOperator.from_eigensystem(energies, np.eye(dim))
    system = QuantumSystem(hamiltonian=hamiltonian, observable=observable)

    sorted_sectors = sector_of[order]
    partition = [
        tuple(np.flatnonzero(sorted_sectors == n).tolist()) for n in range(n_max + 1)
    ]
    blocks = BlockStructure.from_partition(
        partition, system.hamiltonian_in_observable_basis()
    )
    logger.debug("oscillator n_max=%d: %d states, sectors %s", n_max, dim, blocks.sizes)
    return system, blocks


def embed_in_sector(
    system: QuantumSystem, blocks: BlockStructure, block_index: int, seed: int
) -> DensityMatrix:
    """Random full-rank state supported on one block S_r."""
    rng = np.random.default_rng(seed)
    members = list(blocks.partition[block_index])
    basis = system.observable.eigenvectors[:, members]
    local = random_density_matrix(len(members), rng)
    matrix = basis @ local.matrix @ basis.conj().T
    return DensityMatrix(dim=system.dim, matrix=0.5 * (matrix + matrix.conj().T))


def commutes(system: QuantumSystem, tol: Optional[float] = None) -> bool:
    """True when [H, 𝒪] vanishes within tolerance."""
    tol = TOL.herm if tol is None else tol
    scale = max(1.0, _max_abs(system.hamiltonian.matrix))
    return system.commutator_norm() <= tol * scale
