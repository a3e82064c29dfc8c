"""
Configuration settings for qmonitor.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Load environment variables; values already set in the environment win
ENV_PATH = Path(__file__).parent.parent.parent / ".env"
load_dotenv(ENV_PATH)

# Logging Configuration
LOG_LEVEL = os.getenv("QMONITOR_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("QMONITOR_LOG_FILE")

# Execution
DEFAULT_WORKERS = int(os.getenv("QMONITOR_WORKERS", "0")) or (os.cpu_count() or 1)
OUTPUT_DIR = os.getenv("QMONITOR_OUTPUT_DIR", "runs")

# Trajectories per RNG substream; fixed so results do not depend on workers
TRAJECTORY_BLOCK = 4096

# Seed of the auxiliary waiting times added when detecting block structure
SUPPORT_SAMPLE_SEED = 20210301
SUPPORT_SAMPLE_COUNT = 8


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all modules."""

    herm: float = 1e-10
    orth: float = 1e-10
    recon: float = 1e-10
    trace: float = 1e-12
    psd: float = 1e-10
    deg_relative: float = 1e-8
    stoch: float = 1e-10
    sym: float = 1e-10
    eig: float = 1e-10
    fix: float = 1e-10
    neg: float = 1e-12
    supp: float = 1e-12
    q_relative: float = 1e-9
    sampling: float = 1e-8
    block: float = 1e-8


TOL = Tolerances()
