"""
# Implements: qmonitor:Protocol
# Description: Two-point energy measurements around M monitored 𝒪-measurements

Trajectories are simulated in fixed blocks of ``TRAJECTORY_BLOCK``; block b
draws from its own Philox substream keyed by (seed, b), so an ensemble is
the same whatever the number of worker threads.
"""

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import EmptyEnsemble, ProbabilityUnderflow, TooLarge
from .hilbert import DensityMatrix, QuantumSystem
from .settings import DEFAULT_WORKERS, TOL, TRAJECTORY_BLOCK
from .transition import TransitionMatrix, matrix_power, transition_matrix

logger = logging.getLogger(__name__)

EXACT_MAX_DIM = 6
EXACT_MAX_MEASUREMENTS = 6


class WaitingKind(str, Enum):
    FIXED = "fixed"
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    ZENO = "zeno"


@dataclass(frozen=True)
class WaitingTimes:
    """Distribution of the i.i.d. waiting times τ_j between 𝒪-measurements.

    ``tau`` is the fixed value (FIXED) or the mean (EXPONENTIAL); ``low`` and
    ``high`` bound UNIFORM; ``total_time`` fixes τ = T/M for ZENO.
    """

    kind: WaitingKind = WaitingKind.FIXED
    tau: float = 1.0
    low: float = 0.5
    high: float = 1.5
    total_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WaitingKind(self.kind))
        needs_tau = self.kind in (WaitingKind.FIXED, WaitingKind.EXPONENTIAL)
        if needs_tau and not self.tau > 0:
            raise ValueError(f"waiting time must be positive, got {self.tau}")
        if self.kind == WaitingKind.UNIFORM and not 0 < self.low < self.high:
            raise ValueError(
                "uniform waiting times need 0 < low < high, "
                f"got {self.low}, {self.high}"
            )
        if self.kind == WaitingKind.ZENO and not self.total_time > 0:
            raise ValueError(f"total time must be positive, got {self.total_time}")

    @classmethod
    def fixed(cls, tau: float) -> "WaitingTimes":
        return cls(kind=WaitingKind.FIXED, tau=tau)

    @classmethod
    def uniform(cls, low: float, high: float) -> "WaitingTimes":
        return cls(kind=WaitingKind.UNIFORM, low=low, high=high)

    @classmethod
    def exponential(cls, mean: float) -> "WaitingTimes":
        return cls(kind=WaitingKind.EXPONENTIAL, tau=mean)

    @classmethod
    def zeno(cls, total_time: float) -> "WaitingTimes":
        return cls(kind=WaitingKind.ZENO, total_time=total_time)

    @property
    def is_fixed(self) -> bool:
        return self.kind in (WaitingKind.FIXED, WaitingKind.ZENO)

    def fixed_value(self, M: int) -> float:
        if self.kind == WaitingKind.ZENO:
            return self.total_time / M
        if self.kind == WaitingKind.FIXED:
            return self.tau
        raise ValueError(f"{self.kind.value} waiting times are random")

    def sample(self, rng: np.random.Generator, size, M: int) -> np.ndarray:
        if self.is_fixed:
            return np.full(size, self.fixed_value(M))
        if self.kind == WaitingKind.UNIFORM:
            return rng.uniform(self.low, self.high, size=size)
        return rng.exponential(self.tau, size=size)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data


@dataclass(frozen=True)
class ProtocolConfig:
    """M measurements of 𝒪 between two energy measurements."""

    M: int
    waiting: WaitingTimes = field(default_factory=WaitingTimes)
    ensemble_size: int = 10_000
    seed: int = 0
    keep_outcomes: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.ensemble_size < 1:
            raise ValueError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self) -> Dict:
        return {
            "M": self.M,
            "waiting": self.waiting.to_dict(),
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "keep_outcomes": self.keep_outcomes,
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class TrajectoryRecord:
    n: int
    outcomes: Tuple[int, ...]
    m: int
    Q: float

    @classmethod
    def from_indices(
        cls, n: int, outcomes: Tuple[int, ...], m: int, energies: np.ndarray
    ) -> "TrajectoryRecord":
        return cls(
            n=int(n),
            outcomes=tuple(int(k) for k in outcomes),
            m=int(m),
            Q=float(energies[m] - energies[n]),
        )


@dataclass(frozen=True, eq=False)
class HeatEnsemble:
    """Columnar store of trajectory records.

    ``outcomes`` has one row per trajectory and is kept only on request.
    """

    dim: int
    n: np.ndarray
    m: np.ndarray
    Q: np.ndarray
    system_fingerprint: str
    config_fingerprint: str
    outcomes: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.Q)

    def __iter__(self) -> Iterator[TrajectoryRecord]:
        for i in range(len(self)):
            outcomes = () if self.outcomes is None else tuple(self.outcomes[i].tolist())
            yield TrajectoryRecord(
                int(self.n[i]), outcomes, int(self.m[i]), float(self.Q[i])
            )

    @property
    def records(self) -> List[TrajectoryRecord]:
        return list(self)

    @classmethod
    def from_records(
        cls,
        records: List[TrajectoryRecord],
        dim: int,
        system_fingerprint: str = "",
        config_fingerprint: str = "",
    ) -> "HeatEnsemble":
        if not records:
            raise EmptyEnsemble("no trajectory records")
        outcomes = None
        if all(r.outcomes for r in records):
            outcomes = np.array([r.outcomes for r in records], dtype=np.int64)
        return cls(
            dim=dim,
            n=np.array([r.n for r in records], dtype=np.int64),
            m=np.array([r.m for r in records], dtype=np.int64),
            Q=np.array([r.Q for r in records], dtype=float),
            system_fingerprint=system_fingerprint,
            config_fingerprint=config_fingerprint,
            outcomes=outcomes,
        )

    def to_frame(self, system: QuantumSystem) -> pd.DataFrame:
        """One row per trajectory: n, E_n, m, E_m, Q."""
        energies = system.energies
        return pd.DataFrame(
            {
                "n": self.n,
                "E_n": energies[self.n],
                "m": self.m,
                "E_m": energies[self.m],
                "Q": self.Q,
            }
        )


def trajectory_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream ``index`` of the run seeded with ``seed``."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


def _cumulative(columns: np.ndarray, what: str) -> np.ndarray:
    """Column-wise CDFs, rejecting columns whose total is not 1."""
    cdf = np.cumsum(columns, axis=0)
    error = float(np.max(np.abs(cdf[-1] - 1.0)))
    if error > TOL.sampling:
        raise ProbabilityUnderflow(
            f"{what} probabilities sum to 1 only within {error:.3e}", {"error": error}
        )
    return cdf


def _draw(cdf: np.ndarray, columns: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sample from column ``columns[i]`` of ``cdf`` for each i."""
    selected = cdf[:, columns]
    thresholds = rng.random(len(columns)) * selected[-1]
    index = np.sum(selected <= thresholds, axis=0)
    return np.minimum(index, cdf.shape[0] - 1)


@dataclass(frozen=True, eq=False)
class _Sampler:
    """Precomputed CDFs shared by every block of one ensemble."""

    system: QuantumSystem
    config: ProtocolConfig
    energy_cdf: np.ndarray
    outcome_given_energy: np.ndarray
    energy_given_outcome: np.ndarray
    step_cdf: Optional[np.ndarray]

    @classmethod
    def build(
        cls, system: QuantumSystem, rho0: DensityMatrix, config: ProtocolConfig
    ) -> "_Sampler":
        if rho0.dim != system.dim:
            raise ValueError(f"initial state dim {rho0.dim} != system dim {system.dim}")
        populations = rho0.populations(system.hamiltonian.eigenvectors)
        born = system.born_table
        step_cdf = None
        if config.waiting.is_fixed and config.M > 1:
            L = transition_matrix(system, config.waiting.fixed_value(config.M))
            # L is symmetric, so column ℓ is the law of the next outcome given ℓ
            step_cdf = _cumulative(L.matrix, "transition")
        return cls(
            system=system,
            config=config,
            energy_cdf=_cumulative(populations[:, None], "initial energy"),
            outcome_given_energy=_cumulative(born, "first outcome"),
            energy_given_outcome=_cumulative(born.T, "final energy"),
            step_cdf=step_cdf,
        )

    def _random_step(
        self, previous: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        taus = self.config.waiting.sample(rng, len(previous), self.config.M)
        overlap = self.system.overlap
        phases = np.exp(-1j * np.outer(self.system.energies, taus))
        amplitudes = overlap @ (phases * overlap[previous, :].conj().T)
        cdf = _cumulative(np.abs(amplitudes) ** 2, "transition")
        thresholds = rng.random(len(previous)) * cdf[-1]
        return np.minimum(np.sum(cdf <= thresholds, axis=0), self.system.dim - 1)

    def sample(
        self, count: int, rng: np.random.Generator, keep_outcomes: bool
    ) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        M = self.config.M
        n = _draw(self.energy_cdf, np.zeros(count, dtype=np.int64), rng)
        k = _draw(self.outcome_given_energy, n, rng)
        outcomes = np.empty((count, M), dtype=np.int64) if keep_outcomes else None
        if keep_outcomes:
            outcomes[:, 0] = k
        for j in range(1, M):
            if self.step_cdf is not None:
                k = _draw(self.step_cdf, k, rng)
            else:
                k = self._random_step(k, rng)
            if keep_outcomes:
                outcomes[:, j] = k
        m = _draw(self.energy_given_outcome, k, rng)
        return n, m, outcomes


def run_trajectory(
    system: QuantumSystem,
    rho0: DensityMatrix,
    config: ProtocolConfig,
    stream: np.random.Generator,
) -> TrajectoryRecord:
    """Simulate one trajectory n → k_1 … k_M → m."""
    sampler = _Sampler.build(system, rho0, config)
    n, m, outcomes = sampler.sample(1, stream, keep_outcomes=True)
    return TrajectoryRecord.from_indices(
        n[0], tuple(outcomes[0]), m[0], system.energies
    )


def run_ensemble(
    system: QuantumSystem,
    rho0: DensityMatrix,
    config: ProtocolConfig,
    workers: Optional[int] = None,
) -> HeatEnsemble:
    """Independent trajectories, deterministic in the seed for any ``workers``."""
    sampler = _Sampler.build(system, rho0, config)
    size = config.ensemble_size
    n_blocks = math.ceil(size / TRAJECTORY_BLOCK)
    workers = workers or DEFAULT_WORKERS

    def simulate_block(block: int):
        count = min(TRAJECTORY_BLOCK, size - block * TRAJECTORY_BLOCK)
        stream = trajectory_stream(config.seed, block)
        return sampler.sample(count, stream, config.keep_outcomes)

    logger.info(
        "running %d trajectories (N=%d, M=%d, %s waiting) on %d workers",
        size,
        system.dim,
        config.M,
        config.waiting.kind.value,
        workers,
    )
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(simulate_block, range(n_blocks)))
    else:
        parts = [simulate_block(b) for b in range(n_blocks)]

    n = np.concatenate([p[0] for p in parts])
    m = np.concatenate([p[1] for p in parts])
    outcomes = np.concatenate([p[2] for p in parts]) if config.keep_outcomes else None
    energies = system.energies
    return HeatEnsemble(
        dim=system.dim,
        n=n,
        m=m,
        Q=energies[m] - energies[n],
        system_fingerprint=system.fingerprint(),
        config_fingerprint=config.fingerprint(),
        outcomes=outcomes,
    )


def aggregate_heat(energies: np.ndarray, joint: np.ndarray) -> Dict[float, float]:
    """Collapse P(n, m) onto Q = E_m - E_n, merging values within ε_Q."""
    q = (energies[None, :] - energies[:, None]).ravel()
    p = joint.ravel()
    keep = p > 0
    q, p = q[keep], p[keep]
    order = np.argsort(q, kind="stable")
    q, p = q[order], p[order]
    spread = float(energies.max() - energies.min())
    tol = TOL.q_relative * (spread if spread > 0 else 1.0)

    distribution: Dict[float, float] = {}
    anchor = None
    for value, prob in zip(q, p):
        if anchor is None or value - anchor > tol:
            anchor = float(value)
            distribution[anchor] = 0.0
        distribution[anchor] += float(prob)
    return distribution


def _check_exact_inputs(system: QuantumSystem, rho0: DensityMatrix, M: int) -> None:
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if rho0.dim != system.dim:
        raise ValueError(f"initial state dim {rho0.dim} != system dim {system.dim}")


def exact_joint(
    system: QuantumSystem, rho0: DensityMatrix, M: int, tau: float
) -> np.ndarray:
    """P(n, m) by summing every outcome path k_1 … k_M explicitly."""
    _check_exact_inputs(system, rho0, M)
    if system.dim > EXACT_MAX_DIM or M > EXACT_MAX_MEASUREMENTS:
        raise TooLarge(
            f"exact enumeration limited to N <= {EXACT_MAX_DIM} "
            f"and M <= {EXACT_MAX_MEASUREMENTS}",
            {"N": system.dim, "M": M},
        )
    populations = rho0.populations(system.hamiltonian.eigenvectors)
    born = system.born_table
    L = transition_matrix(system, tau).matrix

    paths = np.array(
        list(itertools.product(range(system.dim), repeat=M)), dtype=np.int64
    )
    weights = np.ones(len(paths))
    for j in range(1, M):
        weights *= L[paths[:, j], paths[:, j - 1]]
    first = born[paths[:, 0], :] * weights[:, None]
    last = born[paths[:, -1], :]
    return populations[:, None] * (first.T @ last)


def exact_distribution(
    system: QuantumSystem, rho0: DensityMatrix, M: int, tau: float
) -> Dict[float, float]:
    """Exact heat distribution {Q: probability} for small N and M at fixed τ."""
    return aggregate_heat(system.energies, exact_joint(system, rho0, M, tau))


def joint_energy_distribution(
    system: QuantumSystem, rho0: DensityMatrix, M: int, tau: float
) -> np.ndarray:
    """P(n, k_M, m) from L^{M-1} applied to the first-outcome law, any N and M."""
    _check_exact_inputs(system, rho0, M)
    populations = rho0.populations(system.hamiltonian.eigenvectors)
    born = system.born_table
    L: TransitionMatrix = transition_matrix(system, tau)
    # [k_M, n]: probability of the last outcome given the initial energy
    last_given_n = matrix_power(L, M - 1) @ born
    return populations[:, None, None] * last_given_n.T[:, :, None] * born[None, :, :]


def fast_distribution(
    system: QuantumSystem, rho0: DensityMatrix, M: int, tau: float
) -> Dict[float, float]:
    joint = joint_energy_distribution(system, rho0, M, tau).sum(axis=1)
    return aggregate_heat(system.energies, joint)


def energy_histograms(ensemble: HeatEnsemble, system: QuantumSystem) -> pd.DataFrame:
    """Initial and final energy frequencies, one row per energy level."""
    if len(ensemble) == 0:
        raise EmptyEnsemble("no trajectories to histogram")
    initial = np.bincount(ensemble.n, minlength=ensemble.dim)
    final = np.bincount(ensemble.m, minlength=ensemble.dim)
    return pd.DataFrame(
        {
            "index": np.arange(ensemble.dim),
            "E": system.energies,
            "initial_count": initial,
            "final_count": final,
            "initial_probability": initial / len(ensemble),
            "final_probability": final / len(ensemble),
        }
    )


def outcome_marginal(ensemble: HeatEnsemble) -> np.ndarray:
    """Empirical law of the last 𝒪 outcome k_M."""
    if len(ensemble) == 0:
        raise EmptyEnsemble("no trajectories")
    if ensemble.outcomes is None:
        raise ValueError("ensemble was run without keep_outcomes")
    counts = np.bincount(ensemble.outcomes[:, -1], minlength=ensemble.dim)
    return counts / len(ensemble)
