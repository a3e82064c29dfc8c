"""
# Implements: qmonitor:HeatStats
# Description: Heat characteristic functions, spin heat PMF and partial ITT

Convention: G(u) = ⟨e^{iQu}⟩ with Q = E_m - E_n. On the imaginary axis
u = iε this is G(ε) = ⟨e^{-εQ}⟩, and G(iβ) = 1 for a thermal ρ₀ at β.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .exceptions import BlockMismatch, EmptyEnsemble
from .hilbert import (
    BlockStructure,
    DensityMatrix,
    HermitianOperator,
    QuantumSystem,
    SpinLabel,
    validate_spin,
)
from .protocol import HeatEnsemble, aggregate_heat
from .settings import TOL

logger = logging.getLogger(__name__)


class CurveKind(str, Enum):
    EMPIRICAL = "empirical"
    ANALYTIC = "analytic"


@dataclass(frozen=True, eq=False)
class CharacteristicCurve:
    """G evaluated on a grid of complex arguments u."""

    us: np.ndarray
    values: np.ndarray
    kind: CurveKind
    stderr: Optional[np.ndarray] = None

    @property
    def points(self) -> List[Tuple[complex, complex]]:
        return list(zip(self.us.tolist(), self.values.tolist()))

    def to_frame(self) -> pd.DataFrame:
        stderr = self.stderr if self.stderr is not None else np.zeros(len(self.us))
        return pd.DataFrame(
            {
                "re_u": self.us.real,
                "im_u": self.us.imag,
                "re_G": self.values.real,
                "im_G": self.values.imag,
                "stderr": stderr,
            }
        )


@dataclass(frozen=True, eq=False)
class HeatPMF:
    """Probabilities of Q = ωℓ for integer ℓ."""

    labels: np.ndarray
    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if np.any(self.probabilities < 0):
            raise ValueError("heat probabilities must be non-negative")
        total = float(self.probabilities.sum())
        if abs(total - 1.0) > TOL.trace:
            raise ValueError(f"heat probabilities sum to {total!r}")

    def probability_of(self, label: int) -> float:
        hits = np.flatnonzero(self.labels == label)
        return float(self.probabilities[hits[0]]) if hits.size else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"l": self.labels, "Q": self.support, "probability": self.probabilities}
        )


class JarzynskiResult(NamedTuple):
    beta: float
    mean: float
    stderr: float

    @property
    def deviation(self) -> float:
        """|⟨e^{-βQ}⟩ - 1| in units of the standard error."""
        if self.stderr == 0:
            return 0.0 if self.mean == 1.0 else float("inf")
        return abs(self.mean - 1.0) / self.stderr


class StatisticResult(NamedTuple):
    statistic: float
    p_value: float
    dof: int


def _require_records(ensemble: HeatEnsemble) -> None:
    if len(ensemble) == 0:
        raise EmptyEnsemble("heat ensemble has no records")


def empirical_G(ensemble: HeatEnsemble, us: Sequence[complex]) -> CharacteristicCurve:
    """Sample mean of e^{iQu} with its standard error at every u."""
    _require_records(ensemble)
    us = np.asarray(us, dtype=complex)
    values = np.empty(len(us), dtype=complex)
    stderr = np.empty(len(us))
    count = len(ensemble)
    for i, u in enumerate(us):
        samples = np.exp(1j * u * ensemble.Q)
        values[i] = samples.mean()
        spread = np.mean(np.abs(samples) ** 2) - np.abs(values[i]) ** 2
        stderr[i] = np.sqrt(max(spread, 0.0) / max(count - 1, 1))
    return CharacteristicCurve(
        us=us, values=values, kind=CurveKind.EMPIRICAL, stderr=stderr
    )


def empirical_G_real(
    ensemble: HeatEnsemble, epsilons: Sequence[float]
) -> CharacteristicCurve:
    """⟨e^{-εQ}⟩ on the imaginary axis u = iε, in real arithmetic."""
    _require_records(ensemble)
    epsilons = np.asarray(epsilons, dtype=float)
    values = np.empty(len(epsilons))
    stderr = np.empty(len(epsilons))
    ddof = 1 if len(ensemble) > 1 else 0
    for i, eps in enumerate(epsilons):
        samples = np.exp(-eps * ensemble.Q)
        values[i] = samples.mean()
        stderr[i] = samples.std(ddof=ddof) / np.sqrt(len(ensemble))
    return CharacteristicCurve(
        us=1j * epsilons,
        values=values.astype(complex),
        kind=CurveKind.EMPIRICAL,
        stderr=stderr,
    )


def _shifted_sum(exponents: np.ndarray, weights: np.ndarray) -> Tuple[complex, float]:
    """Σ w e^{a} returned as (mantissa, shift) with the largest Re a removed."""
    mask = weights > 0
    if not mask.any():
        return 0.0, 0.0
    shift = float(np.max(exponents.real[mask]))
    return complex(np.sum(weights[mask] * np.exp(exponents[mask] - shift))), shift


def analytic_G(
    hamiltonian: HermitianOperator, rho0: DensityMatrix, us: Sequence[complex]
) -> CharacteristicCurve:
    """ITT prediction (1/N) Tr[e^{iHu}] Tr[ρ₀ e^{-iHu}] for complex u."""
    us = np.asarray(us, dtype=complex)
    energies = hamiltonian.eigenvalues
    populations = rho0.populations(hamiltonian.eigenvectors)
    uniform = np.full(hamiltonian.dim, 1.0 / hamiltonian.dim)
    values = np.empty(len(us), dtype=complex)
    for i, u in enumerate(us):
        final, a = _shifted_sum(1j * u * energies, uniform)
        initial, b = _shifted_sum(-1j * u * energies, populations)
        values[i] = final * initial * np.exp(a + b)
    return CharacteristicCurve(us=us, values=values, kind=CurveKind.ANALYTIC)


def analytic_G_itt(
    hamiltonian: HermitianOperator, rho0: DensityMatrix, epsilon: float
) -> float:
    """G(ε) = Z(ε) Tr[ρ₀ e^{εH}] / N with shifted exponents."""
    energies = hamiltonian.eigenvalues
    populations = rho0.populations(hamiltonian.eigenvectors)
    partition = -epsilon * energies
    z_shift = partition.max()
    initial = epsilon * energies
    mask = populations > 0
    i_shift = initial[mask].max()
    z = np.exp(partition - z_shift).sum()
    trace = np.sum(populations[mask] * np.exp(initial[mask] - i_shift))
    return float(z * trace * np.exp(z_shift + i_shift) / hamiltonian.dim)


def spin_heat_pmf(s: SpinLabel, omega: float, beta: float) -> HeatPMF:
    """Heat PMF of a thermal spin-s after full thermalization of the final energy.

    With E_k = ωk, c_k ∝ e^{-βωk} and a uniform final level,
    p_ℓ = (1/(2s+1)) Σ_{n: 0 <= n+ℓ <= 2s} c_n, evaluated as the finite sum.
    """
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if beta < 0 or not np.isfinite(beta):
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    levels = int(2 * validate_spin(s)) + 1
    populations = np.exp(-beta * omega * np.arange(levels))
    populations /= populations.sum()
    cumulative = np.concatenate([[0.0], np.cumsum(populations)])

    labels = np.arange(-(levels - 1), levels)
    # n ranges over max(0, -ℓ) .. min(2s, 2s - ℓ)
    low = np.maximum(0, -labels)
    high = np.minimum(levels - 1, levels - 1 - labels)
    probabilities = (cumulative[high + 1] - cumulative[low]) / levels
    return HeatPMF(labels=labels, support=omega * labels, probabilities=probabilities)


def energy_block_labels(blocks: BlockStructure, system: QuantumSystem) -> np.ndarray:
    """Block r containing each energy eigenvector |E_m⟩.

    Raises:
        BlockMismatch: an eigenvector leaks out of every block by more than
            ε_block, or a block receives the wrong number of eigenvectors
    """
    if blocks.dim != system.dim:
        raise BlockMismatch(
            f"block structure covers {blocks.dim} of {system.dim} states"
        )
    born = system.born_table
    weights = np.stack([born[list(block), :].sum(axis=0) for block in blocks.partition])
    labels = np.argmax(weights, axis=0)
    captured = weights[labels, np.arange(system.dim)]
    worst = float(1.0 - captured.min())
    if worst > TOL.block:
        raise BlockMismatch(
            f"energy eigenvector leaks {worst:.3e} out of its block", {"leak": worst}
        )
    counts = np.bincount(labels, minlength=blocks.n_blocks)
    if counts.tolist() != blocks.sizes:
        raise BlockMismatch(
            "energy eigenvectors do not fill the blocks",
            {"counts": counts.tolist(), "sizes": blocks.sizes},
        )
    return labels


def partial_itt_predict(
    blocks: BlockStructure, system: QuantumSystem, rho0: DensityMatrix
) -> Tuple[np.ndarray, np.ndarray]:
    """Block-uniform limits (π̃_k, p_m) of the outcome and final-energy laws."""
    energy_labels = energy_block_labels(blocks, system)
    outcome_labels = blocks.membership()
    pi = rho0.populations(system.observable.eigenvectors)
    c = rho0.populations(system.hamiltonian.eigenvectors)
    sizes = np.asarray(blocks.sizes, dtype=float)

    outcome_weights = np.bincount(outcome_labels, weights=pi, minlength=blocks.n_blocks)
    energy_weights = np.bincount(energy_labels, weights=c, minlength=blocks.n_blocks)
    pi_tilde = (outcome_weights / sizes)[outcome_labels]
    p_m = (energy_weights / sizes)[energy_labels]
    return pi_tilde, p_m


def partial_G(
    blocks: BlockStructure,
    system: QuantumSystem,
    rho0: DensityMatrix,
    us: Sequence[complex],
) -> CharacteristicCurve:
    """Σ_r (1/dim S_r) Tr[e^{iH_r u}] Σ_{n ∈ S_r} c_n e^{-iuE_n}.

    The block-uniform state ρ_∞ enters through the trace over each block;
    with a single block this is the ITT curve of ``analytic_G``.
    """
    energy_labels = energy_block_labels(blocks, system)
    energies = system.energies
    c = rho0.populations(system.hamiltonian.eigenvectors)
    us = np.asarray(us, dtype=complex)
    values = np.empty(len(us), dtype=complex)
    for i, u in enumerate(us):
        terms = []
        for r, h_r in enumerate(blocks.block_hamiltonians):
            members = energy_labels == r
            final, a = _shifted_sum(1j * u * h_r.eigenvalues, np.ones(h_r.dim))
            initial, b = _shifted_sum(-1j * u * energies[members], c[members])
            terms.append((final * initial / h_r.dim, a + b))
        top = max(shift for _, shift in terms)
        values[i] = np.exp(top) * sum(t * np.exp(shift - top) for t, shift in terms)
    return CharacteristicCurve(us=us, values=values, kind=CurveKind.ANALYTIC)


def partial_G_real(
    blocks: BlockStructure,
    system: QuantumSystem,
    rho0: DensityMatrix,
    epsilons: Sequence[float],
) -> np.ndarray:
    """Real values of ``partial_G`` on u = iε."""
    curve = partial_G(blocks, system, rho0, 1j * np.asarray(epsilons, dtype=float))
    return curve.values.real


def _pair_counts(ensemble: HeatEnsemble) -> np.ndarray:
    """Counts of (n, m) indexed [n, m]."""
    dim = ensemble.dim
    counts = np.bincount(ensemble.n * dim + ensemble.m, minlength=dim * dim)
    return counts.reshape(dim, dim)


def heat_histogram(ensemble: HeatEnsemble, system: QuantumSystem) -> pd.DataFrame:
    """Counts per heat value; Q merged within ε_Q from exact (n, m) pairs."""
    _require_records(ensemble)
    merged = aggregate_heat(system.energies, _pair_counts(ensemble).astype(float))
    q = np.fromiter(merged.keys(), dtype=float)
    counts = np.fromiter(merged.values(), dtype=float).round().astype(np.int64)
    return pd.DataFrame(
        {"Q": q, "count": counts, "probability": counts / len(ensemble)}
    )


def jarzynski_check(ensemble: HeatEnsemble, beta: float) -> JarzynskiResult:
    curve = empirical_G_real(ensemble, [beta])
    result = JarzynskiResult(
        beta=beta, mean=float(curve.values[0].real), stderr=float(curve.stderr[0])
    )
    logger.debug("jarzynski beta=%g: %.6f ± %.2e", beta, result.mean, result.stderr)
    return result


def independence_test(ensemble: HeatEnsemble) -> StatisticResult:
    """χ² test of independence between the initial and final energy levels."""
    _require_records(ensemble)
    table = _pair_counts(ensemble)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    if min(table.shape) < 2:
        return StatisticResult(statistic=0.0, p_value=1.0, dof=0)
    statistic, p_value, dof, _ = stats.chi2_contingency(table, correction=False)
    return StatisticResult(
        statistic=float(statistic), p_value=float(p_value), dof=int(dof)
    )


def final_energy_uniformity(ensemble: HeatEnsemble) -> Tuple[StatisticResult, float]:
    """χ² goodness of fit of the final level to uniform, and the TV distance."""
    _require_records(ensemble)
    counts = np.bincount(ensemble.m, minlength=ensemble.dim)
    statistic, p_value = stats.chisquare(counts)
    frequencies = counts / len(ensemble)
    tv = 0.5 * float(np.abs(frequencies - 1.0 / ensemble.dim).sum())
    return StatisticResult(float(statistic), float(p_value), ensemble.dim - 1), tv
