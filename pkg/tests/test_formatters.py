"""Tests for CSV/gnuplot output, manifests and system files."""

import json

import numpy as np
import pandas as pd
import pytest

from qmonitor.exceptions import SystemFileError
from qmonitor.formatters import (
    CsvFormatter,
    GnuplotFormatter,
    OutputWriter,
    PlotSpec,
    sha256_file,
)
from qmonitor.hilbert import oscillator_system, random_density_matrix
from qmonitor.serialization import (
    SystemDocument,
    decode_matrix,
    encode_matrix,
    load_system,
    save_system,
)


@pytest.fixture
def frame():
    return pd.DataFrame({"Q": [-1.5, 0.0, 1.5], "count": [3, 10, 2]})


def test_csv_format(frame):
    formatter = CsvFormatter()
    text = formatter.format(frame)
    assert text.splitlines()[0] == "Q,count"
    assert "\r" not in text
    assert formatter.validate(text)
    assert not formatter.validate("a,b\r\n1,2\r\n")
    assert not formatter.validate("a,b\n1\n")


def test_csv_floats_round_trip():
    values = [0.1, 1 / 3, 1e-300, -2.5e17]
    text = CsvFormatter().format({"x": values})
    parsed = [float(line) for line in text.splitlines()[1:]]
    assert parsed == values


def test_gnuplot_line_plot():
    spec = PlotSpec(title="spectrum", csv_name="spectrum.csv", x="k", ys=["lambda_k"])
    text = GnuplotFormatter().format(spec)
    assert "set datafile separator ','" in text
    assert "plot 'spectrum.csv' using 'k':'lambda_k' with points" in text
    assert GnuplotFormatter().validate(text)


def test_gnuplot_heatmap():
    spec = PlotSpec(
        title="eigenvectors",
        csv_name="eigenvectors.csv",
        x="k",
        ys=["m", "log10_abs_v"],
        style="heatmap",
        logscale="",
    )
    text = GnuplotFormatter().format(spec)
    assert "set view map" in text
    assert "splot 'eigenvectors.csv' using 'k':'m':'log10_abs_v'" in text


def test_output_writer_manifest(tmp_path, frame):
    writer = OutputWriter(tmp_path / "run")
    csv_path = writer.write_csv("heat.csv", frame)
    spec = PlotSpec(title="heat", csv_name="heat.csv", x="Q", ys=["count"])
    writer.write_plot("heat.gp", spec)
    manifest_path = writer.write_manifest({"command": "simulate"})

    manifest = json.loads(manifest_path.read_text())
    assert manifest["command"] == "simulate"
    assert list(manifest["outputs"]) == ["heat.csv", "heat.gp"]
    assert manifest["outputs"]["heat.csv"] == sha256_file(csv_path)


def test_output_writer_rejects_unknown_format(tmp_path, frame):
    with pytest.raises(ValueError, match="Unsupported"):
        OutputWriter(tmp_path).write("x.txt", frame, "latex")


def test_discard_removes_created_directory(tmp_path, frame):
    writer = OutputWriter(tmp_path / "run")
    writer.write_csv("heat.csv", frame)
    writer.discard()
    assert not (tmp_path / "run").exists()


def test_discard_keeps_foreign_files(tmp_path, frame):
    directory = tmp_path / "run"
    directory.mkdir()
    (directory / "notes.txt").write_text("keep")
    writer = OutputWriter(directory)
    writer.write_csv("heat.csv", frame)
    writer.discard()
    assert (directory / "notes.txt").exists()
    assert not (directory / "heat.csv").exists()


def test_matrix_encoding():
    matrix = np.array([[1.0, 0.5 - 0.25j], [0.5 + 0.25j, -2.0]])
    encoded = encode_matrix(matrix)
    assert encoded[0][1] == [0.5, -0.25]
    np.testing.assert_array_equal(decode_matrix(encoded), matrix)


def test_system_file_reload_is_exact(tmp_path, generic_system):
    system, rho0 = generic_system
    path = save_system(system, rho0, tmp_path / "nested" / "system.json", {"seed": 11})
    loaded, loaded_rho, metadata = load_system(path)
    assert metadata == {"seed": 11}
    np.testing.assert_array_equal(loaded.hamiltonian.matrix, system.hamiltonian.matrix)
    np.testing.assert_array_equal(loaded_rho.matrix, rho0.matrix)
    assert loaded.fingerprint() == system.fingerprint()


def test_degenerate_observable_reload(tmp_path):
    """A degenerate oscillator 𝒪 is rediagonalized with a stochastic born table."""
    system, _ = oscillator_system(2, 1.0, 1.8)
    rho0 = random_density_matrix(system.dim, np.random.default_rng(1))
    loaded, _, _ = load_system(save_system(system, rho0, tmp_path / "osc.json"))
    np.testing.assert_allclose(loaded.energies, system.energies, atol=1e-12)
    np.testing.assert_allclose(loaded.born_table.sum(axis=0), 1.0, atol=1e-12)


def test_load_errors(tmp_path):
    with pytest.raises(SystemFileError, match="not found"):
        load_system(tmp_path / "missing.json")

    garbage = tmp_path / "garbage.json"
    garbage.write_text("not json")
    with pytest.raises(SystemFileError, match="JSON"):
        load_system(garbage)

    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"dim": 2, "H": [], "O": [], "rho0": [], "extra": 1}))
    with pytest.raises(SystemFileError):
        load_system(wrong)


def test_edited_system_file_is_rejected(tmp_path, generic_system):
    """A Hamiltonian changed after saving no longer matches the recorded fingerprint."""
    system, rho0 = generic_system
    path = save_system(system, rho0, tmp_path / "system.json")
    document = json.loads(path.read_text())
    assert document["fingerprint"] == system.fingerprint()

    document["H"][0][0][0] += 0.5
    path.write_text(json.dumps(document))
    with pytest.raises(SystemFileError, match="fingerprint"):
        load_system(path)

    del document["fingerprint"]
    path.write_text(json.dumps(document))
    loaded, _, _ = load_system(path)
    assert loaded.fingerprint() != system.fingerprint()


def test_document_shape_check():
    one = [[[1.0, 0.0]]]
    with pytest.raises(SystemFileError, match="2x2"):
        SystemDocument.validate({"dim": 2, "H": one, "O": one, "rho0": one})


if __name__ == "__main__":
    pytest.main([__file__])
