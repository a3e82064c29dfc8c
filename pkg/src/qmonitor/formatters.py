"""Result formatting for experiment outputs."""

import hashlib
import json
import logging
import shutil
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd

logger = logging.getLogger(__name__)


class FormatResult(ABC):
    """Base class for result formatting."""

    @abstractmethod
    def format(self, data) -> str:
        """Format the data into desired output."""
        pass

    @abstractmethod
    def validate(self, formatted_output: str) -> bool:
        """Validate the formatted output meets requirements."""
        pass


class CsvFormatter(FormatResult):
    """Comma separated values with a header row and LF line endings.

    Floats are written by pandas in shortest round-trip form.
    """

    def format(self, data: Union[pd.DataFrame, Dict, List]) -> str:
        df = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
        return df.to_csv(index=False, lineterminator="\n")

    def validate(self, formatted_output: str) -> bool:
        if "\r" in formatted_output or not formatted_output.endswith("\n"):
            return False
        lines = formatted_output.rstrip("\n").split("\n")
        width = lines[0].count(",")
        return bool(lines[0]) and all(line.count(",") == width for line in lines)


@dataclass
class PlotSpec:
    """One gnuplot figure drawn from a CSV written next to the script."""

    title: str
    csv_name: str
    x: str
    ys: List[str]
    xlabel: str = ""
    ylabel: str = ""
    style: str = "points"
    logscale: str = ""
    group_by: Optional[str] = None
    extra: List[str] = field(default_factory=list)


class GnuplotFormatter(FormatResult):
    """gnuplot command files referencing CSV outputs by column name."""

    def format(self, data: PlotSpec) -> str:
        lines = [
            "set datafile separator ','",
            "set key autotitle columnhead",
            f"set title '{data.title}'",
            f"set xlabel '{data.xlabel or data.x}'",
        ]
        if data.ylabel:
            lines.append(f"set ylabel '{data.ylabel}'")
        if data.logscale:
            lines.append(f"set logscale {data.logscale}")
        lines.extend(data.extra)
        if data.style == "heatmap":
            lines.append("set view map")
            lines.append(
                f"splot '{data.csv_name}' using '{data.x}':'{data.ys[0]}':"
                f"'{data.ys[1]}' with points palette pt 5"
            )
        else:
            curves = [
                f"'{data.csv_name}' using '{data.x}':'{y}' "
                f"with {data.style} title '{y}'"
                for y in data.ys
            ]
            lines.append("plot " + ", \\\n     ".join(curves))
        return "\n".join(lines) + "\n"

    def validate(self, formatted_output: str) -> bool:
        return "set datafile separator ','" in formatted_output and (
            "\nplot " in formatted_output or "\nsplot " in formatted_output
        )


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class OutputWriter:
    """Writes the files of one experiment and keeps their hashes.

    Files written through the writer are removed again by ``discard`` when an
    experiment fails part way.
    """

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.formatters: Dict[str, FormatResult] = {
            "csv": CsvFormatter(),
            "gnuplot": GnuplotFormatter(),
        }
        self.hashes: Dict[str, str] = {}
        self._created_directory = False

    def ensure_directory(self) -> Path:
        if not self.directory.exists():
            self.directory.mkdir(parents=True)
            self._created_directory = True
        return self.directory

    def register(self, path: Path) -> None:
        """Hash a file some other writer placed in the output directory."""
        self.hashes[path.name] = sha256_file(path)

    def _write(self, name: str, text: str) -> Path:
        path = self.ensure_directory() / name
        with open(path, "w", newline="") as f:
            f.write(text)
        self.hashes[name] = sha256_file(path)
        logger.debug("wrote %s", path)
        return path

    def write(self, name: str, data, format_type: str) -> Path:
        if format_type not in self.formatters:
            raise ValueError(f"Unsupported format type: {format_type}")
        formatter = self.formatters[format_type]
        formatted_output = formatter.format(data)
        if not formatter.validate(formatted_output):
            raise ValueError(f"Invalid {format_type} output generated for {name}")
        return self._write(name, formatted_output)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        return self.write(name, frame, "csv")

    def write_plot(self, name: str, spec: PlotSpec) -> Path:
        return self.write(name, spec, "gnuplot")

    def write_manifest(self, manifest: Dict) -> Path:
        """Manifest listing every file written so far with its sha256."""
        payload = {**manifest, "outputs": dict(sorted(self.hashes.items()))}
        path = self.directory / "manifest.json"
        with open(path, "w", newline="") as f:
            f.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        return path

    def discard(self) -> None:
        for name in list(self.hashes):
            (self.directory / name).unlink(missing_ok=True)
        (self.directory / "manifest.json").unlink(missing_ok=True)
        self.hashes.clear()
        empty = self.directory.exists() and not any(self.directory.iterdir())
        if self._created_directory and empty:
            shutil.rmtree(self.directory)
        logger.info("removed partial outputs in %s", self.directory)
