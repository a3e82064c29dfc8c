"""Shared fixtures for the qmonitor test suite."""

import logging

import numpy as np
import pytest

from qmonitor.hilbert import (
    QuantumSystem,
    SpinParameters,
    block_diagonal_system,
    random_system,
    spin_system,
)
from qmonitor.protocol import ProtocolConfig, WaitingTimes


@pytest.fixture
def rng():
    """Seeded generator for test inputs."""
    return np.random.default_rng(20240611)


@pytest.fixture
def generic_system():
    """Irreducible random system N=4 with a random initial state."""
    return random_system(4, seed=11)


@pytest.fixture
def small_system():
    """N=3 random system small enough for exact enumeration."""
    return random_system(3, seed=5)


@pytest.fixture
def commuting_system():
    """H and 𝒪 diagonal in the same basis."""
    return QuantumSystem.from_matrices(
        np.diag([0.0, 0.7, 1.9]), np.diag([2.0, 0.0, 1.0])
    )


@pytest.fixture
def block_system():
    """Random H with invariant blocks of sizes 2 and 3, shuffled labels."""
    return block_diagonal_system([2, 3], seed=3)


@pytest.fixture
def spin_half():
    return spin_system(SpinParameters(s=0.5))


@pytest.fixture
def fixed_protocol():
    """M=6 measurements at τ=0.8."""
    return ProtocolConfig(
        M=6, waiting=WaitingTimes.fixed(0.8), ensemble_size=4000, seed=9
    )


@pytest.fixture
def caplog_debug(caplog):
    """Fixture to capture logs at DEBUG level."""
    caplog.set_level(logging.DEBUG)
    return caplog
