"""
# Implements: qmonitor:Asymptotics
# Description: Limit regimes of repeated monitoring

Covers convergence to the fixed point, Zeno freezing, the quasi-commuting
Euclidean evolution generated by Δ(τ) and 𝒜, and the large-s scaling of
the top of the spectrum of L(τ).
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .exceptions import BranchFailure, InsufficientTaus
from .hilbert import (
    QuantumSystem,
    SpinLabel,
    SpinParameters,
    spin_matrices,
    spin_system,
    validate_spin,
)
from .protocol import WaitingKind, WaitingTimes
from .settings import DEFAULT_WORKERS, TOL
from .transition import (
    TransitionMatrix,
    chain_product,
    fixed_point,
    limit_projector,
    matrix_power,
    power_deviation,
    transition_matrix,
)

logger = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 0.01
SMALL_X_LIMIT = 0.25
FIT_FLOOR = 1e-11


def _fit_slope(xs: np.ndarray, ys: np.ndarray) -> Optional[float]:
    if len(xs) < 2:
        return None
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


# -- convergence -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Distances of the M-measurement chain to its predicted limit.

    ``rate`` is the fitted slope of log(distance) per measurement and
    ``predicted_rate`` is log|λ₁| for the largest eigenvalue inside the unit
    circle, when the waiting time is fixed.
    """

    Ms: List[int]
    distances: np.ndarray
    rate: Optional[float]
    predicted_rate: Optional[float]

    @property
    def relative_rate_error(self) -> Optional[float]:
        if self.rate is None or not self.predicted_rate:
            return None
        return abs(self.rate - self.predicted_rate) / abs(self.predicted_rate)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"M": self.Ms, "distance": self.distances})


def itt_convergence(
    system: QuantumSystem,
    tau_spec: Union[float, WaitingTimes],
    Ms: Sequence[int],
    seed: int = 0,
) -> ConvergenceReport:
    """Max-norm distance of P_{k_M|k_1} = L^{M-1} (or a τ-chain) to its limit.

    For fixed τ the limit is 𝒫_{λ=1} + (-1)^{M-1} 𝒫_{λ=-1}. For random waiting
    times one τ sequence is drawn per M and the limit is 𝒫_{λ=1} of the first
    factor.
    """
    if isinstance(tau_spec, WaitingTimes):
        waiting = tau_spec
    else:
        waiting = WaitingTimes.fixed(tau_spec)
    Ms = [int(M) for M in Ms]
    distances = np.empty(len(Ms))
    predicted = None

    if waiting.kind == WaitingKind.FIXED:
        L = transition_matrix(system, waiting.tau)
        for i, M in enumerate(Ms):
            distances[i] = power_deviation(L, M - 1, limit_projector(L, M - 1))
        if L.gap > 0:
            predicted = float(np.log(L.gap))
    else:
        rng = np.random.default_rng(seed)
        for i, M in enumerate(Ms):
            taus = waiting.sample(rng, max(M - 1, 1), M)
            factors = [transition_matrix(system, t) for t in taus]
            product = chain_product(factors) if M > 1 else np.eye(system.dim)
            _, limit = fixed_point(factors[0])
            distances[i] = float(np.max(np.abs(product - limit)))

    usable = distances > FIT_FLOOR
    rate = _fit_slope(np.asarray(Ms)[usable], np.log(distances[usable]))
    logger.debug("convergence rate %s (predicted %s)", rate, predicted)
    return ConvergenceReport(
        Ms=Ms, distances=distances, rate=rate, predicted_rate=predicted
    )


# -- Zeno regime -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZenoReport:
    """D(M) = ‖L(T/M)^M - 𝕀‖_max and its log-log slope in M."""

    total_time: float
    Ms: List[int]
    deviations: np.ndarray
    slope: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "M": self.Ms,
                "tau": [self.total_time / M for M in self.Ms],
                "deviation": self.deviations,
            }
        )


def zeno_analysis(
    system: QuantumSystem, total_time: float, Ms: Sequence[int]
) -> ZenoReport:
    """Freezing of the outcome sequence as measurements become frequent."""
    if total_time <= 0:
        raise ValueError(f"total_time must be positive, got {total_time}")
    Ms = [int(M) for M in Ms]
    deviations = np.array(
        [power_deviation(transition_matrix(system, total_time / M), M) for M in Ms]
    )
    usable = deviations > 0
    log_Ms = np.log(np.asarray(Ms, dtype=float))
    slope = _fit_slope(log_Ms[usable], np.log(deviations[usable]))
    return ZenoReport(total_time=total_time, Ms=Ms, deviations=deviations, slope=slope)


def zeno_single_step(
    system: QuantumSystem, taus: Sequence[float]
) -> Tuple[Optional[float], np.ndarray]:
    """Exponent p in ‖L(τ) - 𝕀‖_max ∝ τ^p over short waiting times."""
    taus = np.asarray(taus, dtype=float)
    deviations = np.array(
        [power_deviation(transition_matrix(system, t), 1) for t in taus]
    )
    usable = deviations > 0
    return _fit_slope(np.log(taus[usable]), np.log(deviations[usable])), deviations


# -- quasi-commuting regime --------------------------------------------------


@dataclass(frozen=True, eq=False)
class EffectiveEvolution:
    """Generator Δ(τ) of the Euclidean evolution e^{-Δ t̃}."""

    delta: np.ndarray
    tau: float
    xi: float
    t_eff: Optional[float] = None

    def __post_init__(self):
        delta = self.delta
        if np.max(np.abs(delta - delta.T)) > TOL.sym:
            raise ValueError("Δ must be symmetric")
        scale = max(1.0, np.max(np.abs(delta)))
        if np.max(np.abs(delta.sum(axis=1))) > TOL.stoch * scale:
            raise ValueError("Δ must annihilate the uniform vector")
        off = delta - np.diag(np.diag(delta))
        if np.max(off) > TOL.neg:
            raise ValueError("Δ off-diagonal entries must be non-positive")

    def propagate(self, t_eff: Optional[float] = None) -> np.ndarray:
        t_eff = self.t_eff if t_eff is None else t_eff
        return symmetric_expm(self.delta, t_eff)


def symmetric_expm(generator: np.ndarray, t: float) -> np.ndarray:
    """e^{-G t} for real symmetric G from its eigendecomposition."""
    values, vectors = scipy.linalg.eigh(0.5 * (generator + generator.T))
    return (vectors * np.exp(-values * t)) @ vectors.T


def _aligned_overlap(system: QuantumSystem) -> Tuple[np.ndarray, np.ndarray]:
    """Overlap with energy columns matched to observable rows, plus their energies."""
    born = system.born_table
    rows, cols = linear_sum_assignment(-born)
    order = cols[np.argsort(rows)]
    return system.overlap[:, order], system.energies[order]


def generator_from_overlap(
    overlap: np.ndarray, xi: Optional[float] = None
) -> Tuple[float, np.ndarray]:
    """(ξ, R) with overlap = e^{iξR} after rephasing columns to a positive diagonal.

    Raises:
        BranchFailure: the gauge-fixed overlap has an eigenvalue on the negative
            real axis, or a vanishing diagonal entry
    """
    diagonal = np.diag(overlap)
    if np.min(np.abs(diagonal)) < TOL.orth:
        raise BranchFailure(
            "overlap has a vanishing diagonal entry; cannot fix the gauge"
        )
    gauged = overlap * (np.abs(diagonal) / diagonal)[None, :]

    distance = float(np.linalg.norm(gauged - np.eye(len(gauged)), 2))
    if distance >= 1.0:
        logger.warning(
            "overlap is %.3f from the identity; logarithm may be far from R", distance
        )
    eigenvalues = np.linalg.eigvals(gauged)
    on_cut = (eigenvalues.real < 0) & (np.abs(eigenvalues.imag) <= 1e-12)
    if on_cut.any():
        raise BranchFailure("overlap has an eigenvalue on the negative real axis")

    generator = -1j * scipy.linalg.logm(gauged)
    generator = 0.5 * (generator + generator.conj().T)
    if xi is None:
        xi = float(np.max(np.abs(generator)))
    if xi == 0:
        return 0.0, np.zeros_like(generator)
    return float(xi), generator / xi


def extract_generator_R(
    system: QuantumSystem, xi: Optional[float] = None
) -> Tuple[float, np.ndarray]:
    """Hermitian R and strength ξ with ⟨α_k|E_ℓ⟩ = (e^{iξR})_{kℓ}.

    Energy eigenvectors are first matched to observable eigenvectors by
    maximal overlap. Without ``xi``, R is scaled to unit max-norm.
    """
    overlap, _ = _aligned_overlap(system)
    return generator_from_overlap(overlap, xi)


def delta_from_generator(
    generator: np.ndarray, energies: np.ndarray, tau: float
) -> np.ndarray:
    """Δ_{kℓ} = -4|R_{kℓ}|² sin²((E_k - E_ℓ)τ/2), diagonal fixed by zero row sums."""
    gaps = energies[:, None] - energies[None, :]
    delta = -4.0 * np.abs(generator) ** 2 * np.sin(gaps * tau / 2) ** 2
    delta = 0.5 * (delta + delta.T)
    np.fill_diagonal(delta, 0.0)
    np.fill_diagonal(delta, -delta.sum(axis=1))
    return delta


def delta_operator(
    system: QuantumSystem, tau: float, xi: Optional[float] = None
) -> EffectiveEvolution:
    """Δ(τ) of a quasi-commuting system, so that L(τ) ≈ 𝕀 - ξ²Δ(τ)."""
    overlap, energies = _aligned_overlap(system)
    xi, generator = generator_from_overlap(overlap, xi)
    delta = delta_from_generator(generator, energies, tau)
    return EffectiveEvolution(delta=delta, tau=tau, xi=xi)


def spin_generator_R(s: SpinLabel) -> np.ndarray:
    """Generator of the tilted-spin overlap: S_y in the ordering m = s … -s."""
    _, s_y, _ = spin_matrices(s)
    return s_y


def spin_family(
    s: SpinLabel, xis: Sequence[float], omega: float = 1.0
) -> List[Tuple[float, QuantumSystem]]:
    return [
        (float(xi), spin_system(SpinParameters(s=s, omega=omega, xi=xi)))
        for xi in xis
    ]


@dataclass(frozen=True)
class EuclideanPoint:
    xi: float
    M: int
    residual: float
    error: float


def euclidean_compare(
    family: Sequence[Tuple[float, QuantumSystem]],
    t_eff: float,
    tau: float,
    delta: Optional[np.ndarray] = None,
) -> List[EuclideanPoint]:
    """‖L(τ)^M - e^{-Δ t̃}‖_max with M = round(t̃/ξ²) for each family member.

    Δ defaults to the generator extracted from each member at its own ξ.
    """
    points = []
    for xi, system in family:
        M = max(int(round(t_eff / xi**2)), 0)
        if delta is not None:
            generator = delta
        else:
            generator = delta_operator(system, tau, xi).delta
        L = transition_matrix(system, tau)
        target = symmetric_expm(generator, t_eff)
        error = float(np.max(np.abs(matrix_power(L, M) - target)))
        points.append(
            EuclideanPoint(xi=xi, M=M, residual=M * xi**2 - t_eff, error=error)
        )
        logger.debug("xi=%g M=%d error=%.3e", xi, M, error)
    return points


# -- the operator 𝒜 and its Legendre spectrum ---------------------------------


def operator_A(s: SpinLabel) -> np.ndarray:
    """Tridiagonal 𝒜 in the basis m = s … -s, rows summing to zero."""
    s = float(validate_spin(s))
    m = np.arange(s, -s - 1, -1)
    casimir = s * (s + 1)
    # 𝒜_{m,m-1} = -s(s+1) + m(m-1), the neighbour below m in this ordering
    below = -casimir + m[:-1] * (m[:-1] - 1)
    return np.diag(2 * (casimir - m**2)) + np.diag(below, 1) + np.diag(below, -1)


def legendre(k: int, x: np.ndarray) -> np.ndarray:
    """P_k(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    previous, current = np.ones_like(x), x.copy()
    if k == 0:
        return previous
    for n in range(1, k):
        following = ((2 * n + 1) * x * current - n * previous) / (n + 1)
        previous, current = current, following
    return current


@dataclass(frozen=True, eq=False)
class SpectralCheck:
    s: float
    ks: np.ndarray
    eigenvalues: np.ndarray
    eigenvalue_errors: np.ndarray
    overlaps: np.ndarray
    parity_errors: np.ndarray

    @property
    def overlap_deficits(self) -> np.ndarray:
        return 1.0 - self.overlaps

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "k": self.ks,
                "a_k": self.eigenvalues,
                "error": self.eigenvalue_errors,
                "overlap": self.overlaps,
                "parity_error": self.parity_errors,
            }
        )


def A_spectral_check(s: SpinLabel, k_max: Optional[int] = None) -> SpectralCheck:
    """Compare the low spectrum of 𝒜 with k(k+1) and Legendre eigenvectors."""
    spin = float(validate_spin(s))
    if k_max is None:
        k_max = int(np.floor(np.sqrt(spin)))
    k_max = min(k_max, int(2 * spin))
    values, vectors = scipy.linalg.eigh(operator_A(spin))
    m = np.arange(spin, -spin - 1, -1)
    ks = np.arange(k_max + 1)

    overlaps = np.empty(len(ks))
    parity = np.empty(len(ks))
    for k in ks:
        reference = legendre(int(k), m / spin)
        reference /= np.linalg.norm(reference)
        overlaps[k] = abs(float(vectors[:, k] @ reference))
        parity[k] = float(np.max(np.abs(vectors[::-1, k] - (-1) ** k * vectors[:, k])))
    return SpectralCheck(
        s=spin,
        ks=ks,
        eigenvalues=values[: len(ks)],
        eigenvalue_errors=np.abs(values[: len(ks)] - ks * (ks + 1)),
        overlaps=overlaps,
        parity_errors=parity,
    )


# -- large-s scaling ---------------------------------------------------------


def scaled_spin_system(s: SpinLabel) -> QuantumSystem:
    """H = -S_z/s monitored through 𝒪 = S_x."""
    return spin_system(SpinParameters(s=s, xi=0.5 * np.pi, scaled=True))


@dataclass(frozen=True, eq=False)
class ScalingDataset:
    """Spectra of L(τ) against x = τk/(2s) and the estimated collapse breakdown."""

    s: float
    taus: List[float]
    frame: pd.DataFrame
    grid: np.ndarray
    dispersion: np.ndarray
    critical_x: Optional[float]
    critical_lambda: Optional[float]
    critical_band: Optional[Tuple[float, float]]
    small_x_coefficient: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.frame["x"].tolist(), self.frame["lambda"].tolist()))


def _collapse_curves(
    frame: pd.DataFrame, taus: Sequence[float], grid: np.ndarray
) -> np.ndarray:
    """λ interpolated on ``grid`` per τ, NaN beyond each curve's range."""
    curves = np.full((len(taus), len(grid)), np.nan)
    for i, tau in enumerate(taus):
        rows = frame[frame["tau"] == tau]
        x, lam = rows["x"].to_numpy(), rows["lambda"].to_numpy()
        inside = grid <= x.max()
        curves[i, inside] = np.interp(grid[inside], x, lam)
    return curves


def _dispersion(curves: np.ndarray) -> np.ndarray:
    covered = np.sum(~np.isnan(curves), axis=0)
    spread = np.full(curves.shape[1], np.nan)
    enough = covered >= 2
    spread[enough] = np.nanstd(curves[:, enough], axis=0)
    return spread


def _first_breakdown(
    grid: np.ndarray, dispersion: np.ndarray, threshold: float
) -> Optional[int]:
    above = np.flatnonzero(np.nan_to_num(dispersion, nan=0.0) > threshold)
    return int(above[0]) if above.size else None


def scaling_collapse(
    s: SpinLabel,
    taus: Sequence[float],
    threshold: float = COLLAPSE_THRESHOLD,
    grid_points: int = 4001,
    workers: Optional[int] = None,
) -> ScalingDataset:
    """Collapse of λ_k(τ) onto a function of x = τk/(2s), and where it fails.

    critical_x is the first x where the cross-τ standard deviation exceeds
    ``threshold``. The band is the range of that estimate over every subset
    of at least three waiting times that shows a breakdown.
    """
    taus = sorted(float(t) for t in taus)
    if len(taus) < 3:
        raise InsufficientTaus(f"need at least 3 waiting times, got {len(taus)}")
    spin = float(validate_spin(s))
    system = scaled_spin_system(spin)

    def spectrum_rows(tau: float) -> pd.DataFrame:
        L = transition_matrix(system, tau)
        k = np.arange(L.dim)
        x = tau * k / (2 * spin)
        return pd.DataFrame(
            {"s": spin, "tau": tau, "k": k, "x": x, "lambda": L.spectrum}
        )

    with ThreadPoolExecutor(max_workers=workers or DEFAULT_WORKERS) as pool:
        frame = pd.concat(list(pool.map(spectrum_rows, taus)), ignore_index=True)

    grid = np.linspace(0.0, max(taus), grid_points)
    curves = _collapse_curves(frame, taus, grid)
    dispersion = _dispersion(curves)
    index = _first_breakdown(grid, dispersion, threshold)
    critical_x = critical_lambda = None
    if index is not None:
        critical_x = float(grid[index])
        critical_lambda = float(np.nanmedian(curves[:, index]))

    estimates = []
    for size in range(3, len(taus) + 1):
        for subset in itertools.combinations(range(len(taus)), size):
            found = _first_breakdown(grid, _dispersion(curves[list(subset)]), threshold)
            if found is not None:
                estimates.append(grid[found])
    band = (float(min(estimates)), float(max(estimates))) if estimates else None

    small = frame[(frame["x"] > 0) & (frame["x"] <= SMALL_X_LIMIT)]
    x = small["x"].to_numpy()
    design = np.column_stack([x**2, x**4])
    deficit = 1.0 - small["lambda"].to_numpy()
    coefficients, *_ = np.linalg.lstsq(design, deficit, rcond=None)

    logger.info(
        "s=%g collapse breaks at x=%s (lambda=%s)", spin, critical_x, critical_lambda
    )
    return ScalingDataset(
        s=spin,
        taus=taus,
        frame=frame,
        grid=grid,
        dispersion=dispersion,
        critical_x=critical_x,
        critical_lambda=critical_lambda,
        critical_band=band,
        small_x_coefficient=float(coefficients[0]),
    )


def transport_distance(a: np.ndarray, b: np.ndarray, spacing: float) -> float:
    """Largest Wasserstein-1 distance between matching columns on a grid."""
    gap = np.cumsum(a - b, axis=0)
    return float(np.max(np.sum(np.abs(gap), axis=0)) * spacing)


def max_distance(a: np.ndarray, b: np.ndarray, spacing: float) -> float:
    return float(np.max(np.abs(a - b)))


DISTANCE_METRICS: Dict[str, Callable[[np.ndarray, np.ndarray, float], float]] = {
    "transport": transport_distance,
    "max": max_distance,
}


def limit_order_study(
    s_list: Sequence[SpinLabel],
    M_list: Sequence[int],
    tau: float,
    t_eff: Optional[float] = None,
    metric: str = "transport",
) -> pd.DataFrame:
    """Distances of L(τ)^M to the uniform projector, 𝕀 and e^{-𝒜t̃}.

    Each (s, M) pair of the grid gives one ``grid`` row with the first two
    distances. With ``t_eff`` every s also gets a ``joint`` row at
    M = round(4s²t̃/τ²) with the distance to e^{-𝒜t̃}. The default metric
    measures columns as distributions over x = m/s, so that distances of
    different s are comparable.
    """
    try:
        distance = DISTANCE_METRICS[metric]
    except KeyError:
        raise ValueError(
            f"unknown metric {metric!r}; choose from {sorted(DISTANCE_METRICS)}"
        ) from None

    rows = []
    for s in s_list:
        spin = float(validate_spin(s))
        L = transition_matrix(scaled_spin_system(spin), tau)
        uniform = np.full((L.dim, L.dim), 1.0 / L.dim)
        identity = np.eye(L.dim)
        spacing = 1.0 / spin
        for M in M_list:
            power = matrix_power(L, int(M))
            rows.append(
                {
                    "study": "grid",
                    "s": spin,
                    "M": int(M),
                    "t_eff": int(M) * tau**2 / (4 * spin**2),
                    "to_uniform": distance(power, uniform, spacing),
                    "to_identity": distance(power, identity, spacing),
                    "to_euclidean": np.nan,
                }
            )
        if t_eff is not None:
            M = int(round(4 * spin**2 * t_eff / tau**2))
            power = matrix_power(L, M)
            euclidean = symmetric_expm(operator_A(spin), t_eff)
            rows.append(
                {
                    "study": "joint",
                    "s": spin,
                    "M": M,
                    "t_eff": t_eff,
                    "to_uniform": distance(power, uniform, spacing),
                    "to_identity": distance(power, identity, spacing),
                    "to_euclidean": distance(power, euclidean, spacing),
                }
            )
    return pd.DataFrame(rows)


def eigenvector_table(L: TransitionMatrix, labels: np.ndarray) -> pd.DataFrame:
    """(k, m, log10|v_k(m)|) triples for a heat map of the eigenvectors."""
    dim = L.dim
    magnitudes = np.maximum(np.abs(L.eigenbasis), 1e-300)
    k, row = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    return pd.DataFrame(
        {
            "k": k.ravel(),
            "m": np.asarray(labels)[row.ravel()],
            "log10_abs_v": np.log10(magnitudes.T).ravel(),
        }
    )


def eigenvector_stability(
    s: SpinLabel, taus: Sequence[float], k_max: int
) -> pd.DataFrame:
    """|⟨v_k(τ), v_k(τ_0)⟩| for the top eigenvectors across waiting times."""
    system = scaled_spin_system(s)
    matrices = [transition_matrix(system, t) for t in taus]
    reference = matrices[0].eigenbasis
    rows = []
    for L in matrices:
        for k in range(min(k_max + 1, L.dim)):
            overlap = abs(float(L.eigenbasis[:, k] @ reference[:, k]))
            rows.append({"tau": L.tau, "k": k, "overlap": overlap})
    return pd.DataFrame(rows)
