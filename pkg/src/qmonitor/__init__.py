"""Thermalization of quantum systems monitored by repeated projective measurements."""

__version__ = "0.1.0"

from .exceptions import ConfigError, NumericalError, QMonitorError
from .hilbert import (
    BlockStructure,
    DensityMatrix,
    HermitianOperator,
    QuantumSystem,
    SpinParameters,
)
from .protocol import HeatEnsemble, ProtocolConfig, WaitingTimes, run_ensemble
from .transition import TransitionMatrix, transition_matrix

__all__ = [
    "BlockStructure",
    "ConfigError",
    "DensityMatrix",
    "HeatEnsemble",
    "HermitianOperator",
    "NumericalError",
    "ProtocolConfig",
    "QMonitorError",
    "QuantumSystem",
    "SpinParameters",
    "TransitionMatrix",
    "WaitingTimes",
    "run_ensemble",
    "transition_matrix",
]
