"""
# Implements: qmonitor:ErrorHandling
# Description: Exception hierarchy for the monitoring simulator

Numerical failures and configuration failures are kept in separate branches
so the command line can map them to distinct exit codes.
"""

from typing import Any, Dict, Optional


class QMonitorError(Exception):
    """Base class for all qmonitor errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class NumericalError(QMonitorError):
    """A numerical contract was violated."""


class ConfigError(QMonitorError):
    """An experiment or system definition is invalid."""


class NotHermitian(NumericalError):
    """Matrix is not Hermitian within tolerance."""


class ConvergenceFailure(NumericalError):
    """The eigensolver did not converge."""


class InvalidSpin(ConfigError):
    """2s is not a positive integer."""


class InvalidTruncation(ConfigError):
    """Oscillator truncation below one quantum."""


class StochasticityViolation(NumericalError):
    """Row or column sums of a transition matrix deviate from one."""


class SymmetryViolation(NumericalError):
    """Transition matrix is not symmetric within tolerance."""


class DimensionMismatch(NumericalError):
    """Operands have incompatible dimensions."""


class ProbabilityUnderflow(NumericalError):
    """A sampling distribution does not sum to one."""


class TooLarge(ConfigError):
    """Exact enumeration requested beyond its bounds."""


class EmptyEnsemble(NumericalError):
    """Statistics requested on an ensemble without records."""


class BlockMismatch(NumericalError):
    """Energy eigenvectors are not supported on the given blocks."""


class BranchFailure(NumericalError):
    """Overlap matrix has an eigenvalue on the negative real axis."""


class InsufficientTaus(ConfigError):
    """Scaling collapse needs at least three waiting times."""


class SystemFileError(ConfigError):
    """A system definition file is missing or does not match the schema."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def categorize_error(error: BaseException) -> str:
    """Categorize an error for reporting."""
    if isinstance(error, ConfigError):
        return "config_error"
    elif isinstance(error, NumericalError):
        return "numerical_error"
    elif isinstance(error, (ValueError, TypeError, KeyError, FileNotFoundError)):
        return "config_error"
    elif isinstance(error, (FloatingPointError, ArithmeticError)):
        return "numerical_error"
    else:
        return "unknown_error"


def exit_code_for(error: BaseException) -> int:
    """Exit code reported by the command line for an error."""
    category = categorize_error(error)
    if category == "config_error":
        return EXIT_CONFIG
    return EXIT_NUMERICAL
