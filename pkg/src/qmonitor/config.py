"""
# Implements: qmonitor:Configuration
# Description: Experiment specifications, presets and configuration files

Precedence, lowest first: preset, configuration file, command-line flags.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import jsonschema
import numpy as np
import toml
import yaml

from .exceptions import ConfigError
from .hilbert import (
    BlockStructure,
    DensityMatrix,
    QuantumSystem,
    SpinParameters,
    block_diagonal_system,
    embed_in_sector,
    oscillator_system,
    random_density_matrix,
    random_system,
    spin_system,
    thermal_state,
)
from .protocol import ProtocolConfig, WaitingTimes
from .serialization import load_system
from .settings import OUTPUT_DIR
from .transition import two_level_system

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "experiment.json"

PRESETS: Dict[str, Dict[str, Any]] = {
    "fig1a": {
        "name": "fig1a",
        "system": {"kind": "random", "N": 5, "state": {"kind": "random"}},
        "protocol": {
            "M": 20,
            "waiting": {"kind": "fixed", "tau": 1.0},
            "ensemble_size": 100_000,
        },
        "analysis": ["histogram", "g_curve"],
    },
    "fig1b": {
        "name": "fig1b",
        "system": {"kind": "random", "N": 15, "state": {"kind": "random"}},
        "protocol": {
            "M": 20,
            "waiting": {"kind": "fixed", "tau": 1.0},
            "ensemble_size": 100_000,
        },
        "analysis": ["histogram", "g_curve"],
        "parameters": {"epsilons": np.linspace(-1.0, 1.0, 21).round(12).tolist()},
    },
    "spin72": {
        "name": "spin72",
        "system": {
            "kind": "spin",
            "s": 3.5,
            "omega": 1.0,
            "xi": float(0.5 * np.pi),
            "state": {"kind": "thermal", "beta": 0.5},
        },
        "protocol": {
            "M": 25,
            "waiting": {"kind": "fixed", "tau": 1.0},
            "ensemble_size": 100_000,
        },
        "analysis": ["histogram", "pmf", "g_curve"],
    },
    "oscillator": {
        "name": "oscillator",
        "system": {
            "kind": "oscillator",
            "n_max": 3,
            "omega1": 1.0,
            "omega2": 1.8,
            "state": {"kind": "random"},
        },
        "protocol": {
            "M": 30,
            "waiting": {"kind": "fixed", "tau": 2.0},
            "ensemble_size": 100_000,
            "keep_outcomes": True,
        },
        "analysis": ["oscillator"],
    },
    "fig4": {
        "name": "fig4",
        "system": {"kind": "spin", "s": 300, "scaled": True, "xi": float(0.5 * np.pi)},
        "protocol": {"M": 1},
        "analysis": ["collapse"],
        "parameters": {"taus": [0.5, 1.0, 2.0, 4.0]},
    },
}

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "output_dir": OUTPUT_DIR,
    "protocol": {
        "M": 20,
        "waiting": {"kind": "fixed", "tau": 1.0},
        "ensemble_size": 10_000,
    },
    "analysis": [],
    "parameters": {},
}

# Starting points of `analyze KIND` when neither a preset nor a file is given
ANALYSIS_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "spectrum": {"system": {"kind": "random", "N": 5}},
    "collapse": {
        "system": {"kind": "spin", "s": 300, "scaled": True},
        "parameters": {"taus": [0.5, 1.0, 2.0, 4.0]},
    },
    "convergence": {
        "system": {"kind": "random", "N": 5},
        "parameters": {"Ms": [5, 10, 20, 40]},
    },
    "zeno": {
        "system": {"kind": "random", "N": 4},
        "parameters": {"Ms": [100, 300, 1000, 3000, 10000], "total_time": 1.0},
    },
    "quasi": {
        "system": {"kind": "spin", "s": 2},
        "parameters": {"xis": [0.04, 0.02, 0.01], "t_eff": 1.0},
    },
    "limits": {
        "system": {"kind": "spin", "s": 20, "scaled": True},
        "parameters": {
            "s_list": [20, 80, 320],
            "Ms": [10, 100, 1000, 10000],
            "tau": 0.2,
            "t_eff": 0.5,
        },
    },
    "oscillator": PRESETS["oscillator"],
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``; None never overrides."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a TOML, YAML or JSON configuration file chosen by suffix."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    text = path.read_text()
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            data = toml.loads(text)
        elif suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        elif suffix == ".json":
            data = json.loads(text) if text.strip() else None
        else:
            raise ConfigError(
                f"unsupported configuration format {suffix!r} "
                "(use .toml, .yaml or .json)"
            )
    except (toml.TomlDecodeError, yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"could not parse {path}: {e}") from e
    if not data:
        raise ConfigError(f"configuration file {path} is empty")
    if not isinstance(data, dict):
        raise ConfigError(f"configuration file {path} must hold a table of keys")
    return data


@dataclass
class ExperimentSpec:
    """A fully resolved experiment."""

    name: str
    system: Dict[str, Any]
    protocol: Dict[str, Any]
    analysis: List[str]
    output_dir: str
    seed: int
    parameters: Dict[str, Any] = field(default_factory=dict)

    _schema = None

    @classmethod
    def _load_schema(cls) -> Dict[str, Any]:
        """Load the JSON schema for validation."""
        if cls._schema is None:
            try:
                with open(SCHEMA_PATH) as f:
                    cls._schema = json.load(f)
            except Exception as e:
                logger.error("Failed to load experiment schema: %s", e)
                raise
        return cls._schema

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentSpec":
        try:
            jsonschema.validate(data, cls._load_schema())
        except jsonschema.exceptions.ValidationError as e:
            location = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"invalid experiment at {location}: {e.message}") from e
        return cls(
            name=data["name"],
            system=data["system"],
            protocol=data["protocol"],
            analysis=list(data["analysis"]),
            output_dir=data["output_dir"],
            seed=int(data["seed"]),
            parameters=data.get("parameters", {}),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir) / self.name

    def parameter(self, key: str, default: Any = None) -> Any:
        return self.parameters.get(key, default)


def resolve_spec(
    preset: Optional[str] = None,
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    base: Optional[Dict[str, Any]] = None,
) -> ExperimentSpec:
    """Merge defaults, a base, a preset, a configuration file and flag overrides."""
    data = deep_merge(DEFAULTS, base or {})
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
            )
        data = deep_merge(data, PRESETS[preset])
    if config_path is not None:
        data = deep_merge(data, read_config_file(config_path))
    if overrides:
        data = deep_merge(data, overrides)
    if "name" not in data or "system" not in data:
        raise ConfigError(
            "no experiment given: pass --preset or a --config file with name and system"
        )
    return ExperimentSpec.from_dict(data)


def build_system(
    spec: ExperimentSpec,
) -> Tuple[QuantumSystem, DensityMatrix, Optional[BlockStructure]]:
    """Construct the system, its initial state and known invariant blocks."""
    params = spec.system
    kind = params["kind"]
    seed = int(params.get("seed", spec.seed))
    rng = np.random.default_rng([seed, 1])
    blocks = None

    if kind == "random":
        system, rho0 = random_system(int(params.get("N", 5)), seed)
    elif kind == "blocks":
        system, rho0 = block_diagonal_system(params.get("block_sizes", [2, 3]), seed)
    elif kind == "spin":
        spin = SpinParameters(
            s=params.get("s", 0.5),
            omega=params.get("omega", 1.0),
            xi=params.get("xi", 0.5 * np.pi),
            scaled=params.get("scaled", False),
        )
        system = spin_system(spin)
        rho0 = random_density_matrix(system.dim, rng)
    elif kind == "oscillator":
        system, blocks = oscillator_system(
            int(params.get("n_max", 3)),
            params.get("omega1", 1.0),
            params.get("omega2", 1.8),
            zero_point=params.get("zero_point", True),
        )
        rho0 = random_density_matrix(system.dim, rng)
    elif kind == "two_level":
        system = two_level_system(
            params.get("phi", 0.5 * np.pi), params.get("gap", 1.0)
        )
        rho0 = random_density_matrix(2, rng)
    elif kind == "file":
        if "path" not in params:
            raise ConfigError("system kind 'file' needs a path")
        system, rho0, _ = load_system(params["path"])
    else:
        raise ConfigError(f"unknown system kind {kind!r}")

    state = params.get("state", {"kind": "random"})
    if state["kind"] == "thermal":
        rho0 = thermal_state(system.hamiltonian, float(state.get("beta", 1.0)))
    elif state["kind"] == "sector":
        if blocks is None:
            raise ConfigError("sector initial states need an oscillator system")
        # sector n is the block of dimension n + 1
        sector = int(state.get("sector", 0))
        if sector + 1 not in blocks.sizes:
            raise ConfigError(
                f"sector {sector} out of range (0..{blocks.n_blocks - 1})"
            )
        rho0 = embed_in_sector(system, blocks, blocks.sizes.index(sector + 1), seed)
    logger.debug(
        "built %s system N=%d (%s initial state)", kind, system.dim, state["kind"]
    )
    return system, rho0, blocks


def build_protocol(spec: ExperimentSpec) -> ProtocolConfig:
    params = spec.protocol
    waiting = WaitingTimes(**params.get("waiting", {"kind": "fixed", "tau": 1.0}))
    return ProtocolConfig(
        M=int(params.get("M", 20)),
        waiting=waiting,
        ensemble_size=int(params.get("ensemble_size", 10_000)),
        seed=spec.seed,
        keep_outcomes=bool(params.get("keep_outcomes", False)),
    )
