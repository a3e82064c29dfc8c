"""
# Implements: qmonitor:Experiments
# Description: Simulation and analysis pipelines behind the command line

Each pipeline reads an ExperimentSpec, writes its tables and plot scripts
through an OutputWriter and returns a summary dictionary for the manifest.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .asymptotics import (
    COLLAPSE_THRESHOLD,
    A_spectral_check,
    delta_from_generator,
    delta_operator,
    eigenvector_stability,
    eigenvector_table,
    euclidean_compare,
    itt_convergence,
    limit_order_study,
    operator_A,
    scaled_spin_system,
    scaling_collapse,
    spin_family,
    spin_generator_R,
    zeno_analysis,
    zeno_single_step,
)
from .config import ExperimentSpec, build_protocol, build_system
from .exceptions import ConfigError
from .formatters import OutputWriter, PlotSpec
from .heat_stats import (
    analytic_G_itt,
    empirical_G_real,
    energy_block_labels,
    final_energy_uniformity,
    heat_histogram,
    independence_test,
    jarzynski_check,
    partial_G_real,
    partial_itt_predict,
    spin_heat_pmf,
)
from .hilbert import BlockStructure, DensityMatrix, QuantumSystem, validate_spin
from .protocol import (
    HeatEnsemble,
    ProtocolConfig,
    energy_histograms,
    outcome_marginal,
    run_ensemble,
)
from .serialization import save_system
from .transition import (
    block_decompose,
    block_leakage,
    fixed_point,
    matrix_power,
    spectrum_table,
    transition_matrix,
    two_level_min_eigenvalue,
)

logger = logging.getLogger(__name__)

Summary = Dict[str, Any]

DEFAULT_EPSILONS = np.linspace(-1.0, 1.0, 21).round(12).tolist()


@dataclass
class RunContext:
    """Where an experiment writes and how many workers it may use."""

    spec: ExperimentSpec
    writer: OutputWriter
    workers: Optional[int] = None


@dataclass
class SimulationState:
    system: QuantumSystem
    rho0: DensityMatrix
    blocks: Optional[BlockStructure]
    config: ProtocolConfig
    ensemble: HeatEnsemble


def _optional(value) -> Optional[float]:
    return None if value is None else float(value)


def _z_scores(
    observed: np.ndarray, expected: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    out = np.zeros_like(expected, dtype=float)
    return np.divide(observed - expected, sigma, out=out, where=sigma > 0)


def _binomial_sigma(p: np.ndarray, count: int) -> np.ndarray:
    return np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / count)


def _tau(spec: ExperimentSpec) -> float:
    if "tau" in spec.parameters:
        return float(spec.parameters["tau"])
    return float(spec.protocol.get("waiting", {}).get("tau", 1.0))


def _spin_label(spec: ExperimentSpec, analysis: str) -> float:
    if spec.system["kind"] != "spin":
        raise ConfigError(
            f"{analysis} analysis needs a spin system, got {spec.system['kind']!r}"
        )
    return float(validate_spin(spec.system.get("s", 0.5)))


def _strictly_decreasing(values: Sequence[float]) -> bool:
    values = list(values)
    return all(b < a for a, b in zip(values, values[1:]))


# -- simulate ----------------------------------------------------------------


def _histogram_step(ctx: RunContext, state: SimulationState) -> Summary:
    writer = ctx.writer
    energies = energy_histograms(state.ensemble, state.system)
    writer.write_csv("energy_histograms.csv", energies)
    writer.write_csv("heat_histogram.csv", heat_histogram(state.ensemble, state.system))
    writer.write_plot(
        "energy_histograms.gp",
        PlotSpec(
            title=f"{ctx.spec.name}: initial and final energy",
            csv_name="energy_histograms.csv",
            x="E",
            ys=["initial_probability", "final_probability"],
            ylabel="probability",
            style="impulses",
        ),
    )
    writer.write_plot(
        "heat_histogram.gp",
        PlotSpec(
            title=f"{ctx.spec.name}: heat distribution",
            csv_name="heat_histogram.csv",
            x="Q",
            ys=["probability"],
            style="impulses",
        ),
    )
    uniformity, tv = final_energy_uniformity(state.ensemble)
    independence = independence_test(state.ensemble)
    logger.info("final energy: chi2 p=%.3g, TV to uniform %.2e", uniformity.p_value, tv)
    return {
        "uniformity_p_value": uniformity.p_value,
        "uniformity_tv": tv,
        "independence_p_value": independence.p_value,
    }


def _g_curve_step(ctx: RunContext, state: SimulationState) -> Summary:
    spec, system, rho0 = ctx.spec, state.system, state.rho0
    epsilons = np.asarray(spec.parameter("epsilons", DEFAULT_EPSILONS), dtype=float)
    empirical = empirical_G_real(state.ensemble, epsilons)

    blocks = state.blocks
    if blocks is None:
        waiting = state.config.waiting
        trial_tau = waiting.fixed_value(state.config.M) if waiting.is_fixed else 1.0
        blocks = block_decompose(system, [trial_tau])
    if blocks.n_blocks == 1:
        analytic = np.array(
            [analytic_G_itt(system.hamiltonian, rho0, e) for e in epsilons]
        )
    else:
        logger.info(
            "G curve uses the block-wise prediction over %d blocks", blocks.n_blocks
        )
        analytic = partial_G_real(blocks, system, rho0, epsilons)

    values = empirical.values.real
    z = _z_scores(values, analytic, empirical.stderr)
    frame = pd.DataFrame(
        {
            "epsilon": epsilons,
            "empirical": values,
            "stderr": empirical.stderr,
            "analytic": analytic,
            "z": z,
        }
    )
    ctx.writer.write_csv("g_curve.csv", frame)
    ctx.writer.write_plot(
        "g_curve.gp",
        PlotSpec(
            title=f"{spec.name}: characteristic function",
            csv_name="g_curve.csv",
            x="epsilon",
            ys=["empirical", "analytic"],
            ylabel="G",
            style="linespoints",
        ),
    )
    summary: Summary = {
        "g_curve_max_abs_z": float(np.max(np.abs(z))),
        "blocks": blocks.sizes,
    }

    state_spec = spec.system.get("state", {})
    if state_spec.get("kind") == "thermal":
        result = jarzynski_check(state.ensemble, float(state_spec.get("beta", 1.0)))
        summary.update(
            {
                "jarzynski_mean": result.mean,
                "jarzynski_stderr": result.stderr,
                "jarzynski_deviation": result.deviation,
            }
        )
    return summary


def _pmf_step(ctx: RunContext, state: SimulationState) -> Summary:
    spec = ctx.spec
    s = _spin_label(spec, "pmf")
    state_spec = spec.system.get("state", {})
    if state_spec.get("kind") != "thermal":
        raise ConfigError("pmf analysis needs a thermal initial state")
    beta = float(state_spec.get("beta", 1.0))
    if spec.system.get("scaled", False):
        omega = 1.0 / s
    else:
        omega = float(spec.system.get("omega", 1.0))
    pmf = spin_heat_pmf(s, omega, beta)

    ensemble = state.ensemble
    levels = int(2 * s) + 1
    # energies ascend with the index, so Q/ω is the index difference
    counts = np.bincount(ensemble.m - ensemble.n + levels - 1, minlength=2 * levels - 1)
    empirical = counts / len(ensemble)
    sigma = _binomial_sigma(pmf.probabilities, len(ensemble))
    z = _z_scores(empirical, pmf.probabilities, sigma)

    frame = pmf.to_frame()
    frame["empirical"] = empirical
    frame["sigma"] = sigma
    frame["z"] = z
    ctx.writer.write_csv("heat_pmf.csv", frame)
    ctx.writer.write_plot(
        "heat_pmf.gp",
        PlotSpec(
            title=f"{spec.name}: heat PMF at beta={beta:g}",
            csv_name="heat_pmf.csv",
            x="Q",
            ys=["probability", "empirical"],
            style="linespoints",
        ),
    )
    return {
        "pmf_total": float(pmf.probabilities.sum()),
        "pmf_max_abs_z": float(np.max(np.abs(z))),
    }


SIMULATION_STEPS: Dict[str, Callable[[RunContext, SimulationState], Summary]] = {
    "histogram": _histogram_step,
    "g_curve": _g_curve_step,
    "pmf": _pmf_step,
}


def run_simulation(ctx: RunContext) -> Summary:
    """Monte Carlo run of the monitoring protocol plus the requested statistics."""
    spec = ctx.spec
    steps = spec.analysis or ["histogram"]
    unknown = [step for step in steps if step not in SIMULATION_STEPS]
    if unknown:
        raise ConfigError(f"simulate cannot produce {unknown}; run them with analyze")

    system, rho0, blocks = build_system(spec)
    config = build_protocol(spec)
    path = save_system(
        system,
        rho0,
        ctx.writer.ensure_directory() / "system.json",
        metadata={"experiment": spec.name, "kind": spec.system["kind"]},
    )
    ctx.writer.register(path)

    ensemble = run_ensemble(system, rho0, config, workers=ctx.workers)
    ctx.writer.write_csv("ensemble.csv", ensemble.to_frame(system))
    state = SimulationState(system, rho0, blocks, config, ensemble)

    summary: Summary = {
        "N": system.dim,
        "M": config.M,
        "realizations": len(ensemble),
        "system_fingerprint": ensemble.system_fingerprint,
        "config_fingerprint": ensemble.config_fingerprint,
    }
    for step in steps:
        logger.info("simulate step %s", step)
        summary.update(SIMULATION_STEPS[step](ctx, state))
    return summary


# -- analyze -----------------------------------------------------------------


def analyze_spectrum(ctx: RunContext) -> Summary:
    spec = ctx.spec
    system, _, _ = build_system(spec)
    taus = [float(t) for t in spec.parameter("taus", [_tau(spec)])]
    matrices = [transition_matrix(system, t) for t in taus]
    if spec.system["kind"] == "spin":
        label = float(spec.system.get("s", 0.5))
    else:
        label = system.dim
    ctx.writer.write_csv("spectrum.csv", spectrum_table(matrices, label))
    ctx.writer.write_plot(
        "spectrum.gp",
        PlotSpec(
            title=f"{spec.name}: spectrum of L",
            csv_name="spectrum.csv",
            x="k",
            ys=["lambda_k"],
        ),
    )

    summary: Summary = {
        "gaps": {f"{L.tau:g}": L.gap for L in matrices},
        "fixed_point_multiplicity": {f"{L.tau:g}": fixed_point(L)[0] for L in matrices},
        "blocks": block_decompose(system, taus).sizes,
    }
    if spec.system["kind"] == "two_level":
        phi = float(spec.system.get("phi", 0.5 * np.pi))
        gap = float(spec.system.get("gap", 1.0))
        errors = [
            abs(L.spectrum[-1] - two_level_min_eigenvalue(phi, gap, L.tau))
            for L in matrices
        ]
        summary["two_level_max_error"] = float(max(errors))
    if spec.parameter("eigenvectors", False):
        table = eigenvector_table(matrices[0], system.observable.eigenvalues)
        ctx.writer.write_csv("eigenvectors.csv", table)
        ctx.writer.write_plot(
            "eigenvectors.gp",
            PlotSpec(
                title=f"{spec.name}: log10 |v_k(m)|",
                csv_name="eigenvectors.csv",
                x="k",
                ys=["m", "log10_abs_v"],
                style="heatmap",
            ),
        )
    return summary


def analyze_collapse(ctx: RunContext) -> Summary:
    spec = ctx.spec
    s = _spin_label(spec, "collapse")
    taus = spec.parameter("taus", [0.5, 1.0, 2.0, 4.0])
    dataset = scaling_collapse(
        s,
        taus,
        threshold=float(spec.parameter("threshold", COLLAPSE_THRESHOLD)),
        workers=ctx.workers,
    )
    writer = ctx.writer
    writer.write_csv("collapse.csv", dataset.frame)
    dispersion = pd.DataFrame(
        {"x": dataset.grid, "dispersion": dataset.dispersion}
    ).dropna()
    writer.write_csv("dispersion.csv", dispersion)
    k_max = int(spec.parameter("k_max", 5))
    writer.write_csv(
        "eigenvector_stability.csv", eigenvector_stability(s, dataset.taus, k_max)
    )
    writer.write_plot(
        "collapse.gp",
        PlotSpec(
            title=f"s={s:g}: lambda against x = tau k / 2s",
            csv_name="collapse.csv",
            x="x",
            ys=["lambda"],
            extra=["set xrange [0:2]"],
        ),
    )
    writer.write_plot(
        "dispersion.gp",
        PlotSpec(
            title=f"s={s:g}: spread across waiting times",
            csv_name="dispersion.csv",
            x="x",
            ys=["dispersion"],
            style="lines",
            logscale="y",
        ),
    )
    if spec.parameter("eigenvectors", False):
        system = scaled_spin_system(s)
        L = transition_matrix(system, dataset.taus[0])
        table = eigenvector_table(L, system.observable.eigenvalues)
        writer.write_csv("eigenvectors.csv", table)

    below = dataset.grid < 0.9
    return {
        "s": s,
        "taus": dataset.taus,
        "critical_x": dataset.critical_x,
        "critical_lambda": dataset.critical_lambda,
        "critical_band": list(dataset.critical_band) if dataset.critical_band else None,
        "small_x_coefficient": dataset.small_x_coefficient,
        "max_dispersion_below_0_9": _optional(np.nanmax(dataset.dispersion[below])),
    }


def analyze_convergence(ctx: RunContext) -> Summary:
    spec = ctx.spec
    system, _, _ = build_system(spec)
    waiting = build_protocol(spec).waiting
    if "tau" in spec.parameters and waiting.is_fixed:
        waiting = dataclasses.replace(waiting, tau=_tau(spec))
    Ms = spec.parameter("Ms", [5, 10, 20, 40])
    report = itt_convergence(system, waiting, Ms, seed=spec.seed)
    ctx.writer.write_csv("convergence.csv", report.to_frame())
    ctx.writer.write_plot(
        "convergence.gp",
        PlotSpec(
            title=f"{spec.name}: distance to the limit",
            csv_name="convergence.csv",
            x="M",
            ys=["distance"],
            style="linespoints",
            logscale="y",
        ),
    )
    return {
        "rate": report.rate,
        "predicted_rate": report.predicted_rate,
        "relative_rate_error": report.relative_rate_error,
    }


def analyze_zeno(ctx: RunContext) -> Summary:
    spec = ctx.spec
    system, _, _ = build_system(spec)
    report = zeno_analysis(
        system,
        float(spec.parameter("total_time", 1.0)),
        spec.parameter("Ms", [100, 300, 1000, 3000, 10000]),
    )
    short_taus = spec.parameter("short_taus", [0.1, 0.05, 0.025])
    exponent, _ = zeno_single_step(system, short_taus)
    ctx.writer.write_csv("zeno.csv", report.to_frame())
    ctx.writer.write_plot(
        "zeno.gp",
        PlotSpec(
            title=f"{spec.name}: freezing at T={report.total_time:g}",
            csv_name="zeno.csv",
            x="M",
            ys=["deviation"],
            style="linespoints",
            logscale="xy",
        ),
    )
    logger.info("zeno slope %s, single-step exponent %s", report.slope, exponent)
    return {"slope": report.slope, "single_step_exponent": exponent}


def analyze_quasi(ctx: RunContext) -> Summary:
    spec = ctx.spec
    s = _spin_label(spec, "quasi")
    omega = float(spec.system.get("omega", 1.0))
    tau = _tau(spec)
    t_eff = float(spec.parameter("t_eff", 1.0))
    xis = sorted(
        (float(x) for x in spec.parameter("xis", [0.04, 0.02, 0.01])), reverse=True
    )

    closed_form = operator_A(s) * np.sin(omega * tau / 2) ** 2
    m = np.arange(s, -s - 1, -1)
    from_generator = delta_from_generator(spin_generator_R(s), -omega * m, tau)
    generator_error = float(np.max(np.abs(from_generator - closed_form)))

    family = spin_family(s, xis, omega)
    points = euclidean_compare(family, t_eff, tau, delta=closed_form)
    extracted = [
        float(np.max(np.abs(delta_operator(system, tau, xi).delta - closed_form)))
        for xi, system in family
    ]
    frame = pd.DataFrame(
        {
            "xi": [p.xi for p in points],
            "M": [p.M for p in points],
            "residual": [p.residual for p in points],
            "error": [p.error for p in points],
            "delta_error": extracted,
        }
    )
    ctx.writer.write_csv("quasi.csv", frame)
    ctx.writer.write_plot(
        "quasi.gp",
        PlotSpec(
            title=f"s={s:g}: distance to the Euclidean evolution",
            csv_name="quasi.csv",
            x="xi",
            ys=["error"],
            style="linespoints",
            logscale="xy",
        ),
    )

    check = A_spectral_check(spec.parameter("s_check", 100), spec.parameter("k_max", 5))
    ctx.writer.write_csv("A_spectrum.csv", check.to_frame())
    return {
        "closed_form_error": generator_error,
        "max_extracted_delta_error": max(extracted),
        "errors_decrease": _strictly_decreasing(frame["error"]),
        "A_max_eigenvalue_error": float(check.eigenvalue_errors.max()),
        "A_min_legendre_overlap": float(check.overlaps.min()),
    }


def analyze_limits(ctx: RunContext) -> Summary:
    spec = ctx.spec
    s_list = spec.parameter("s_list", [20, 80, 320])
    Ms = [int(M) for M in spec.parameter("Ms", [10, 100, 1000, 10000])]
    frame = limit_order_study(
        s_list,
        Ms,
        tau=float(spec.parameter("tau", 0.2)),
        t_eff=_optional(spec.parameter("t_eff", 0.5)),
        metric=spec.parameter("metric", "transport"),
    )
    ctx.writer.write_csv("limits.csv", frame)

    grid = frame[frame["study"] == "grid"]
    smallest_s = grid[grid["s"] == grid["s"].min()].sort_values("M")
    smallest_M = grid[grid["M"] == grid["M"].min()].sort_values("s")
    joint = frame[frame["study"] == "joint"].sort_values("s")
    return {
        "metric": spec.parameter("metric", "transport"),
        "uniform_trend_in_M": _strictly_decreasing(smallest_s["to_uniform"]),
        "identity_trend_in_s": _strictly_decreasing(smallest_M["to_identity"]),
        "euclidean_trend_in_s": _strictly_decreasing(joint["to_euclidean"]),
    }


def analyze_oscillator(ctx: RunContext) -> Summary:
    """Block-wise thermalization in the conserved-quanta sectors."""
    spec = ctx.spec
    system, rho0, blocks = build_system(spec)
    if blocks is None:
        raise ConfigError("oscillator analysis needs an oscillator system")
    config = dataclasses.replace(build_protocol(spec), keep_outcomes=True)
    if config.waiting.is_fixed:
        tau = config.waiting.fixed_value(config.M)
    else:
        tau = _tau(spec)

    found = block_decompose(system, [tau])
    chain = matrix_power(transition_matrix(system, tau), config.M)
    leakage = block_leakage(chain, blocks)

    ensemble = run_ensemble(system, rho0, config, workers=ctx.workers)
    count = len(ensemble)
    pi_tilde, p_m = partial_itt_predict(blocks, system, rho0)
    pi_empirical = outcome_marginal(ensemble)
    p_empirical = np.bincount(ensemble.m, minlength=system.dim) / count
    pi_z = _z_scores(pi_empirical, pi_tilde, _binomial_sigma(pi_tilde, count))
    p_z = _z_scores(p_empirical, p_m, _binomial_sigma(p_m, count))

    # sector n is the block of dimension n + 1
    sector_of_block = np.asarray(blocks.sizes) - 1
    outcome_sector = sector_of_block[blocks.membership()]
    energy_sector = sector_of_block[energy_block_labels(blocks, system)]
    ctx.writer.write_csv(
        "partial_itt.csv",
        pd.DataFrame(
            {
                "index": np.arange(system.dim),
                "outcome": system.observable.eigenvalues,
                "outcome_sector": outcome_sector,
                "pi_tilde": pi_tilde,
                "pi_empirical": pi_empirical,
                "pi_z": pi_z,
                "E": system.energies,
                "energy_sector": energy_sector,
                "p_m": p_m,
                "p_empirical": p_empirical,
                "p_z": p_z,
            }
        ),
    )

    rows = []
    for n in sorted(sector_of_block):
        outcomes = outcome_sector == n
        levels = energy_sector == n
        rows.append(
            {
                "n": int(n),
                "dim": int(n + 1),
                "weight_predicted": float(pi_tilde[outcomes].sum()),
                "weight_empirical": float(pi_empirical[outcomes].sum()),
                "max_abs_z_outcomes": float(np.max(np.abs(pi_z[outcomes]))),
                "max_abs_z_energies": float(np.max(np.abs(p_z[levels]))),
            }
        )
    ctx.writer.write_csv("sectors.csv", pd.DataFrame(rows))

    return {
        "sectors": blocks.sizes,
        "support_graph_matches_sectors": (
            sorted(found.partition) == sorted(blocks.partition)
        ),
        "off_block_leakage": leakage,
        "max_abs_z": float(max(np.max(np.abs(pi_z)), np.max(np.abs(p_z)))),
        "realizations": count,
    }


ANALYSES: Dict[str, Callable[[RunContext], Summary]] = {
    "spectrum": analyze_spectrum,
    "collapse": analyze_collapse,
    "convergence": analyze_convergence,
    "zeno": analyze_zeno,
    "quasi": analyze_quasi,
    "limits": analyze_limits,
    "oscillator": analyze_oscillator,
}


def run_analysis(kind: str, ctx: RunContext) -> Summary:
    try:
        analysis = ANALYSES[kind]
    except KeyError:
        raise ConfigError(
            f"unknown analysis {kind!r}; choose from {sorted(ANALYSES)}"
        ) from None
    logger.info("analysis %s for %s", kind, ctx.spec.name)
    return analysis(ctx)
