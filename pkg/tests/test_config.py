"""Tests for presets, configuration files and system construction."""

import importlib
import json

import dotenv
import numpy as np
import pytest

from qmonitor import settings
from qmonitor.config import (
    ANALYSIS_DEFAULTS,
    PRESETS,
    build_protocol,
    build_system,
    deep_merge,
    read_config_file,
    resolve_spec,
)
from qmonitor.exceptions import ConfigError, InvalidSpin
from qmonitor.hilbert import random_system
from qmonitor.protocol import WaitingKind
from qmonitor.serialization import save_system


def test_deep_merge():
    base = {"a": 1, "nested": {"x": 1, "y": 2}}
    merged = deep_merge(base, {"nested": {"y": 3, "z": None}, "a": None, "b": [1]})
    assert merged == {"a": 1, "nested": {"x": 1, "y": 3}, "b": [1]}
    assert base == {"a": 1, "nested": {"x": 1, "y": 2}}


@pytest.mark.parametrize(
    "name, text",
    [
        ("run.toml", 'name = "file"\n[system]\nkind = "random"\nN = 3\n'),
        ("run.yaml", "name: file\nsystem:\n  kind: random\n  N: 3\n"),
        (
            "run.json",
            json.dumps({"name": "file", "system": {"kind": "random", "N": 3}}),
        ),
    ],
)
def test_read_config_formats(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    data = read_config_file(path)
    assert data["name"] == "file"
    assert data["system"] == {"kind": "random", "N": 3}


def test_read_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "missing.toml")

    empty = tmp_path / "empty.toml"
    empty.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        read_config_file(empty)

    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="table"):
        read_config_file(listing)

    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError, match="parse"):
        read_config_file(broken)

    other = tmp_path / "run.ini"
    other.write_text("[a]\n")
    with pytest.raises(ConfigError, match="unsupported"):
        read_config_file(other)


def test_resolve_needs_an_experiment():
    with pytest.raises(ConfigError, match="no experiment"):
        resolve_spec()


def test_resolve_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        resolve_spec(preset="fig9")


def test_precedence(tmp_path):
    """Flags override the file, which overrides the preset."""
    path = tmp_path / "run.yaml"
    path.write_text("seed: 5\nprotocol:\n  M: 7\n")
    spec = resolve_spec(preset="fig1a", config_path=path)
    assert spec.seed == 5
    assert spec.protocol["M"] == 7
    preset_size = PRESETS["fig1a"]["protocol"]["ensemble_size"]
    assert spec.protocol["ensemble_size"] == preset_size

    spec = resolve_spec(
        preset="fig1a",
        config_path=path,
        overrides={"seed": 9, "output_dir": str(tmp_path)},
    )
    assert spec.seed == 9
    assert spec.output_path == tmp_path / "fig1a"


def test_schema_violation_names_location():
    with pytest.raises(ConfigError, match="protocol/M"):
        resolve_spec(preset="fig1a", overrides={"protocol": {"M": 0}})
    with pytest.raises(ConfigError, match="system/kind"):
        resolve_spec(overrides={"name": "x", "system": {"kind": "lattice"}})


@pytest.mark.parametrize("kind", sorted(ANALYSIS_DEFAULTS))
def test_analysis_defaults_are_valid(kind):
    spec = resolve_spec(base={"name": kind, **ANALYSIS_DEFAULTS[kind]})
    assert spec.name == kind
    assert spec.to_dict()["system"]["kind"] == ANALYSIS_DEFAULTS[kind]["system"]["kind"]


def test_parameter_lookup():
    spec = resolve_spec(preset="fig4")
    assert spec.parameter("taus") == [0.5, 1.0, 2.0, 4.0]
    assert spec.parameter("missing", 3) == 3


def test_build_random_system():
    spec = resolve_spec(preset="fig1a", overrides={"seed": 4})
    system, rho0, blocks = build_system(spec)
    expected, _ = random_system(5, 4)
    assert system.fingerprint() == expected.fingerprint()
    assert rho0.dim == 5
    assert blocks is None


def test_build_thermal_spin():
    system, rho0, _ = build_system(resolve_spec(preset="spin72"))
    assert system.dim == 8
    populations = rho0.populations(system.hamiltonian.eigenvectors)
    weights = np.exp(-0.5 * system.energies)
    np.testing.assert_allclose(populations, weights / weights.sum(), atol=1e-12)


def test_build_oscillator_sector_state():
    spec = resolve_spec(
        preset="oscillator",
        overrides={"system": {"state": {"kind": "sector", "sector": 2}}},
    )
    system, rho0, blocks = build_system(spec)
    assert system.dim == 10
    block = blocks.partition[blocks.sizes.index(3)]
    populations = rho0.populations(system.observable.eigenvectors)
    assert populations[list(block)].sum() == pytest.approx(1.0)


def test_sector_state_errors():
    spec = resolve_spec(
        preset="oscillator",
        overrides={"system": {"state": {"kind": "sector", "sector": 9}}},
    )
    with pytest.raises(ConfigError, match="out of range"):
        build_system(spec)
    spec = resolve_spec(
        preset="fig1a", overrides={"system": {"state": {"kind": "sector", "sector": 0}}}
    )
    with pytest.raises(ConfigError, match="oscillator"):
        build_system(spec)


def test_invalid_spin_is_a_config_error():
    spec = resolve_spec(overrides={"name": "x", "system": {"kind": "spin", "s": 0.3}})
    with pytest.raises(InvalidSpin):
        build_system(spec)
    assert issubclass(InvalidSpin, ConfigError)


def test_build_from_file(tmp_path):
    source, rho_source = random_system(3, seed=8)
    path = save_system(source, rho_source, tmp_path / "system.json")
    spec = resolve_spec(
        overrides={"name": "x", "system": {"kind": "file", "path": str(path)}}
    )
    system, rho0, _ = build_system(spec)
    np.testing.assert_allclose(system.energies, source.energies, atol=1e-12)
    np.testing.assert_allclose(rho0.matrix, rho_source.matrix, atol=1e-15)

    with pytest.raises(ConfigError, match="path"):
        build_system(resolve_spec(overrides={"name": "x", "system": {"kind": "file"}}))


def test_build_protocol():
    protocol = build_protocol(
        resolve_spec(
            preset="fig1a",
            overrides={
                "seed": 3,
                "protocol": {"waiting": {"kind": "exponential", "tau": 0.4}},
            },
        )
    )
    assert protocol.M == 20
    assert protocol.seed == 3
    assert protocol.waiting.kind is WaitingKind.EXPONENTIAL
    assert protocol.waiting.tau == 0.4


def test_settings_read_dotenv_file(tmp_path, monkeypatch, mocker):
    """A .env file fills unset QMONITOR_* variables when settings load."""
    env_file = tmp_path / ".env"
    env_file.write_text("QMONITOR_OUTPUT_DIR=from-dotenv\n")
    read_env = dotenv.load_dotenv
    loader = mocker.patch(
        "dotenv.load_dotenv", side_effect=lambda path: read_env(env_file)
    )
    monkeypatch.setenv("QMONITOR_OUTPUT_DIR", "placeholder")
    monkeypatch.delenv("QMONITOR_OUTPUT_DIR")

    reloaded = importlib.reload(settings)
    loader.assert_called_once_with(reloaded.ENV_PATH)
    assert reloaded.ENV_PATH.name == ".env"
    assert reloaded.OUTPUT_DIR == "from-dotenv"

    mocker.stopall()
    monkeypatch.undo()
    importlib.reload(settings)


if __name__ == "__main__":
    pytest.main([__file__])
