"""
# Implements: qmonitor:SystemFiles
# Description: JSON documents holding a system and its initial state
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import jsonschema
import numpy as np

from .exceptions import SystemFileError
from .hilbert import DensityMatrix, QuantumSystem

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "quantum_system.json"


class SystemDocument:
    """Schema-checked reader and writer for system definition files."""

    _schema = None

    @classmethod
    def _load_schema(cls) -> Dict[str, Any]:
        """Load the JSON schema for validation."""
        if cls._schema is None:
            try:
                with open(SCHEMA_PATH) as f:
                    cls._schema = json.load(f)
            except Exception as e:
                logger.error("Failed to load system schema: %s", e)
                raise
        return cls._schema

    @classmethod
    def validate(cls, document: Dict[str, Any]) -> None:
        try:
            jsonschema.validate(document, cls._load_schema())
        except jsonschema.exceptions.ValidationError as e:
            logger.error("Invalid system document: %s", e.message)
            raise SystemFileError(f"invalid system document: {e.message}") from e
        dim = document["dim"]
        for key in ("H", "O", "rho0"):
            rows = document[key]
            if len(rows) != dim or any(len(row) != dim for row in rows):
                raise SystemFileError(f"{key} is not a {dim}x{dim} matrix")


def encode_matrix(matrix: np.ndarray) -> List[List[List[float]]]:
    """Row-major [re, im] pairs; json writes floats in shortest round-trip form."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(matrix)]


def decode_matrix(rows: List[List[List[float]]]) -> np.ndarray:
    pairs = np.asarray(rows, dtype=float)
    return pairs[..., 0] + 1j * pairs[..., 1]


def save_system(
    system: QuantumSystem,
    rho0: DensityMatrix,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write H, 𝒪 and ρ₀ in the common basis they were built in."""
    document = {
        "dim": system.dim,
        "H": encode_matrix(system.hamiltonian.matrix),
        "O": encode_matrix(system.observable.matrix),
        "rho0": encode_matrix(rho0.matrix),
        "fingerprint": system.fingerprint(),
        "metadata": metadata or {},
    }
    SystemDocument.validate(document)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=1) + "\n")
    logger.debug("saved %d-level system to %s", system.dim, path)
    return path


def load_system(
    path: Union[str, Path],
) -> Tuple[QuantumSystem, DensityMatrix, Dict[str, Any]]:
    """Read and validate a system file.

    Raises:
        SystemFileError: the file is missing, not JSON, not schema-valid, or
            its matrices no longer match the recorded fingerprint
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise SystemFileError(f"system file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise SystemFileError(f"system file {path} is not valid JSON: {e}") from e
    SystemDocument.validate(document)

    system = QuantumSystem.from_matrices(
        decode_matrix(document["H"]), decode_matrix(document["O"])
    )
    recorded = document.get("fingerprint")
    if recorded is not None and recorded != system.fingerprint():
        raise SystemFileError(
            f"system file {path} was modified: fingerprint {system.fingerprint()} "
            f"does not match the recorded {recorded}"
        )
    rho0 = DensityMatrix(dim=document["dim"], matrix=decode_matrix(document["rho0"]))
    return system, rho0, document.get("metadata", {})
