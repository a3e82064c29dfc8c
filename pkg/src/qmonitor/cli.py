"""
# Implements: qmonitor:CommandLine
# Description: Reproducible simulate and analyze commands
"""

import logging
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np

from .config import ANALYSIS_DEFAULTS, PRESETS, ExperimentSpec, resolve_spec
from .exceptions import categorize_error, exit_code_for
from .experiments import ANALYSES, RunContext, Summary, run_analysis, run_simulation
from .formatters import OutputWriter
from .logging_config import configure_logging
from .settings import LOG_FILE, LOG_LEVEL

logger = logging.getLogger(__name__)

VERSIONED_PACKAGES = ("qmonitor-thermalization", "numpy", "scipy", "pandas", "click")


def _float_list(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got {value!r}")


def _int_list(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    numbers = _float_list(ctx, param, value)
    if numbers is None:
        return None
    if any(n != int(n) for n in numbers):
        raise click.BadParameter(f"expected comma separated integers, got {value!r}")
    return [int(n) for n in numbers]


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _versions() -> Dict[str, str]:
    versions = {}
    for package in VERSIONED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def _manifest(command: str, spec: ExperimentSpec, summary: Summary) -> Dict[str, Any]:
    """Inputs, versions and results; the timestamp lives only here."""
    return {
        "command": command,
        "experiment": spec.name,
        "seed": spec.seed,
        "spec": _jsonable(spec.to_dict()),
        "versions": _versions(),
        "created": datetime.now(timezone.utc).isoformat(),
        "summary": _jsonable(summary),
    }


def _execute(
    click_ctx: click.Context,
    command: str,
    resolve: Callable[[], ExperimentSpec],
    run: Callable[[RunContext], Summary],
    workers: Optional[int],
) -> None:
    """Resolve, run and record one experiment; failures remove partial outputs."""
    context_filter = click_ctx.obj["context_filter"]
    writer = None
    try:
        spec = resolve()
        writer = OutputWriter(spec.output_path)
        with context_filter.context(experiment=spec.name, seed=spec.seed):
            summary = run(RunContext(spec=spec, writer=writer, workers=workers))
            writer.write_manifest(_manifest(command, spec, summary))
    except Exception as e:
        if writer is not None:
            writer.discard()
        category = categorize_error(e)
        logger.debug("%s failed", command, exc_info=True)
        click.echo(f"Error ({category}): {e}", err=True)
        if category == "config_error":
            click.echo(f"Try 'qmonitor {command} --help' for usage.", err=True)
        click_ctx.exit(exit_code_for(e))
        return

    click.echo(
        f"Wrote {len(writer.hashes)} files and manifest.json to {writer.directory}"
    )
    for key, value in _jsonable(summary).items():
        click.echo(f"  {key}: {value}")


def _prune(data: Dict[str, Any]) -> Dict[str, Any]:
    """Drop unset flags so they never shadow the file or preset."""
    pruned = {}
    for key, value in data.items():
        if isinstance(value, dict):
            value = _prune(value)
            if not value:
                continue
        if value is not None:
            pruned[key] = value
    return pruned


def _common_overrides(seed, output, realizations, tau, N, s) -> Dict[str, Any]:
    return {
        "seed": seed,
        "output_dir": output,
        "protocol": {
            "ensemble_size": realizations,
            "waiting": {"tau": tau},
        },
        "system": {"N": N, "s": s},
    }


def run_options(function):
    """Options shared by simulate and analyze."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False),
            help="TOML, YAML or JSON experiment file",
        ),
        click.option(
            "--preset",
            type=click.Choice(sorted(PRESETS)),
            help="Start from a named experiment",
        ),
        click.option("--seed", type=click.IntRange(min=0), help="Master RNG seed"),
        click.option(
            "--realizations", type=click.IntRange(min=1), help="Number of trajectories"
        ),
        click.option(
            "--workers",
            type=click.IntRange(min=1),
            help="Worker threads (default: all cores)",
        ),
        click.option(
            "--output",
            type=click.Path(file_okay=False),
            help="Parent directory of the experiment outputs",
        ),
        click.option(
            "--tau", type=float, help="Fixed waiting time between measurements"
        ),
        click.option(
            "--N",
            "dim",
            type=click.IntRange(min=2),
            help="Dimension of a random system",
        ),
        click.option("--s", "spin", type=float, help="Spin quantum number"),
    ]
    for option in reversed(options):
        function = option(function)
    return function


@click.group()
@click.option(
    "--log-level",
    default=LOG_LEVEL,
    show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging verbosity",
)
@click.option(
    "--log-file",
    default=LOG_FILE,
    type=click.Path(dir_okay=False),
    help="Also log to a rotating file",
)
@click.pass_context
def cli(ctx: click.Context, log_level: str, log_file: Optional[str]):
    """qmonitor - thermalization of quantum systems under repeated measurement

    Simulates the energy - observable - ... - observable - energy protocol and
    analyzes the transition matrices that drive it.
    """
    ctx.ensure_object(dict)
    ctx.obj["context_filter"] = configure_logging(log_level, log_file)


@cli.command()
@run_options
@click.option(
    "--beta",
    type=float,
    help="Start from the thermal state at this inverse temperature",
)
@click.option(
    "--M",
    "measurements",
    type=click.IntRange(min=1),
    help="Observable measurements per trajectory",
)
@click.pass_context
def simulate(
    ctx: click.Context,
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int],
    realizations: Optional[int],
    workers: Optional[int],
    output: Optional[str],
    tau: Optional[float],
    dim: Optional[int],
    spin: Optional[float],
    beta: Optional[float],
    measurements: Optional[int],
):
    """Monte Carlo heat statistics of a monitored system."""
    overrides = _common_overrides(seed, output, realizations, tau, dim, spin)
    overrides["protocol"]["M"] = measurements
    if beta is not None:
        overrides["system"]["state"] = {"kind": "thermal", "beta": beta}

    _execute(
        ctx,
        "simulate",
        lambda: resolve_spec(preset, config_path, _prune(overrides)),
        run_simulation,
        workers,
    )


@cli.command()
@click.argument("kind", type=click.Choice(sorted(ANALYSES)))
@run_options
@click.option("--taus", callback=_float_list, help="Comma separated waiting times")
@click.option(
    "--Ms", "Ms", callback=_int_list, help="Comma separated measurement counts"
)
@click.option("--total-time", type=float, help="Fixed total time of a Zeno sequence")
@click.option(
    "--nmax", type=click.IntRange(min=1), help="Oscillator truncation in quanta"
)
@click.option("--t-eff", type=float, help="Effective Euclidean time")
@click.option("--xis", callback=_float_list, help="Comma separated tilt angles")
@click.option("--s-list", callback=_float_list, help="Comma separated spins")
@click.option(
    "--metric",
    type=click.Choice(["transport", "max"]),
    help="Distance used by the limits study",
)
@click.option(
    "--eigenvectors",
    is_flag=True,
    default=None,
    help="Also write the eigenvector table",
)
@click.pass_context
def analyze(
    ctx: click.Context,
    kind: str,
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int],
    realizations: Optional[int],
    workers: Optional[int],
    output: Optional[str],
    tau: Optional[float],
    dim: Optional[int],
    spin: Optional[float],
    taus: Optional[List[float]],
    Ms: Optional[List[int]],
    total_time: Optional[float],
    nmax: Optional[int],
    t_eff: Optional[float],
    xis: Optional[List[float]],
    s_list: Optional[List[float]],
    metric: Optional[str],
    eigenvectors: Optional[bool],
):
    """Spectral and asymptotic studies: KIND selects the analysis."""
    overrides = _common_overrides(seed, output, realizations, tau, dim, spin)
    overrides["system"]["n_max"] = nmax
    overrides["analysis"] = [kind]
    overrides["parameters"] = {
        "tau": tau,
        "taus": taus,
        "Ms": Ms,
        "total_time": total_time,
        "t_eff": t_eff,
        "xis": xis,
        "s_list": s_list,
        "metric": metric,
        "eigenvectors": eigenvectors,
    }
    base = {"name": kind, **ANALYSIS_DEFAULTS[kind]}

    _execute(
        ctx,
        "analyze",
        lambda: resolve_spec(preset, config_path, _prune(overrides), base=base),
        lambda run_ctx: run_analysis(kind, run_ctx),
        workers,
    )


if __name__ == "__main__":
    cli()
