"""Tests for the two-time measurement protocol and its samplers."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from qmonitor.exceptions import EmptyEnsemble, TooLarge
from qmonitor.hilbert import random_system, thermal_state
from qmonitor.protocol import (
    HeatEnsemble,
    ProtocolConfig,
    TrajectoryRecord,
    WaitingKind,
    WaitingTimes,
    aggregate_heat,
    energy_histograms,
    exact_distribution,
    exact_joint,
    fast_distribution,
    joint_energy_distribution,
    outcome_marginal,
    run_ensemble,
    run_trajectory,
    trajectory_stream,
)
from qmonitor.transition import transition_matrix


def _joint_frequencies(ensemble: HeatEnsemble) -> np.ndarray:
    dim = ensemble.dim
    counts = np.bincount(ensemble.n * dim + ensemble.m, minlength=dim * dim)
    return counts.reshape(dim, dim) / len(ensemble)


def _within_sigma(
    frequencies: np.ndarray, probabilities: np.ndarray, count: int
) -> bool:
    sigma = np.sqrt(probabilities * (1 - probabilities) / count)
    return bool(np.all(np.abs(frequencies - probabilities) <= 5 * sigma + 1e-3))


def test_waiting_time_validation():
    with pytest.raises(ValueError):
        WaitingTimes.fixed(0.0)
    with pytest.raises(ValueError):
        WaitingTimes.uniform(2.0, 1.0)
    with pytest.raises(ValueError):
        WaitingTimes.exponential(-1.0)
    with pytest.raises(ValueError):
        WaitingTimes.zeno(0.0)


def test_zeno_waiting_divides_total_time():
    waiting = WaitingTimes.zeno(2.0)
    assert waiting.is_fixed
    assert waiting.fixed_value(8) == pytest.approx(0.25)
    with pytest.raises(ValueError, match="random"):
        WaitingTimes.uniform(0.5, 1.0).fixed_value(3)


def test_waiting_kind_from_string():
    waiting = WaitingTimes(kind="exponential", tau=0.3)
    assert waiting.kind is WaitingKind.EXPONENTIAL
    assert waiting.to_dict()["kind"] == "exponential"


def test_protocol_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(M=0)
    with pytest.raises(ValueError):
        ProtocolConfig(M=3, ensemble_size=0)
    with pytest.raises(ValueError):
        ProtocolConfig(M=3, seed=-1)


def test_protocol_fingerprint_tracks_seed():
    a = ProtocolConfig(M=3, seed=1)
    assert a.fingerprint() == ProtocolConfig(M=3, seed=1).fingerprint()
    assert a.fingerprint() != ProtocolConfig(M=3, seed=2).fingerprint()


def test_exact_joint_is_a_distribution(small_system):
    system, rho0 = small_system
    joint = exact_joint(system, rho0, 3, 0.8)
    assert np.all(joint >= 0)
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)
    c = rho0.populations(system.hamiltonian.eigenvectors)
    assert_allclose(joint.sum(axis=1), c, atol=1e-12)


def test_exact_and_fast_agree(generic_system):
    """Path enumeration and the L^{M-1} shortcut give the same P(n, m) at N = 4."""
    system, rho0 = generic_system
    assert system.dim == 4
    for M in (1, 2, 4):
        exact = exact_joint(system, rho0, M, 0.7)
        fast = joint_energy_distribution(system, rho0, M, 0.7).sum(axis=1)
        assert_allclose(exact, fast, atol=1e-12)
    exact_q = exact_distribution(system, rho0, 4, 0.7)
    fast_q = fast_distribution(system, rho0, 4, 0.7)
    assert sum(exact_q.values()) == pytest.approx(1.0, abs=1e-12)
    assert list(exact_q) == pytest.approx(list(fast_q))
    assert list(exact_q.values()) == pytest.approx(list(fast_q.values()), abs=1e-12)


def test_exact_enumeration_limits(small_system):
    system, rho0 = small_system
    with pytest.raises(TooLarge):
        exact_joint(system, rho0, 7, 1.0)
    big, big_rho = random_system(7, seed=1)
    with pytest.raises(TooLarge):
        exact_joint(big, big_rho, 2, 1.0)
    with pytest.raises(ValueError):
        exact_joint(system, rho0, 0, 1.0)


def test_final_law_approaches_uniform(generic_system):
    """The final-energy law converges to 1/N at the rate of the spectral gap."""
    system, rho0 = generic_system
    L = transition_matrix(system, 1.0)
    for M in (5, 20, 60):
        final = joint_energy_distribution(system, rho0, M, 1.0).sum(axis=(0, 1))
        error = float(np.max(np.abs(final - 1.0 / system.dim)))
        assert error <= L.gap ** (M - 1) + 1e-12


def test_aggregate_heat_merges_degenerate_values():
    energies = np.array([0.0, 1.0, 1.0 + 1e-13])
    joint = np.full((3, 3), 1.0 / 9)
    distribution = aggregate_heat(energies, joint)
    assert len(distribution) == 3
    assert list(distribution.values()) == pytest.approx([2 / 9, 5 / 9, 2 / 9])


def test_ensemble_matches_exact(small_system):
    system, rho0 = small_system
    config = ProtocolConfig(
        M=3, waiting=WaitingTimes.fixed(0.8), ensemble_size=20_000, seed=4
    )
    ensemble = run_ensemble(system, rho0, config)
    assert len(ensemble) == 20_000
    exact = exact_joint(system, rho0, 3, 0.8)
    assert _within_sigma(_joint_frequencies(ensemble), exact, len(ensemble))


def test_random_waiting_path_matches_fixed(small_system):
    """A uniform law squeezed around τ samples the same P(n, m) as fixed τ."""
    system, rho0 = small_system
    waiting = WaitingTimes.uniform(0.8 - 1e-9, 0.8 + 1e-9)
    config = ProtocolConfig(M=3, waiting=waiting, ensemble_size=20_000, seed=8)
    ensemble = run_ensemble(system, rho0, config)
    exact = exact_joint(system, rho0, 3, 0.8)
    assert _within_sigma(_joint_frequencies(ensemble), exact, len(ensemble))


def test_ensemble_is_deterministic_across_workers(generic_system):
    """Blocks use their own substreams, so the worker count never matters."""
    system, rho0 = generic_system
    config = ProtocolConfig(
        M=5, waiting=WaitingTimes.fixed(0.6), ensemble_size=9000, seed=21
    )
    serial = run_ensemble(system, rho0, config, workers=1)
    parallel = run_ensemble(system, rho0, config, workers=3)
    assert_array_equal(serial.n, parallel.n)
    assert_array_equal(serial.m, parallel.m)
    assert_array_equal(serial.Q, parallel.Q)
    assert serial.config_fingerprint == parallel.config_fingerprint


def test_seed_changes_ensemble(generic_system):
    system, rho0 = generic_system
    first = run_ensemble(system, rho0, ProtocolConfig(M=4, ensemble_size=500, seed=1))
    second = run_ensemble(system, rho0, ProtocolConfig(M=4, ensemble_size=500, seed=2))
    assert not np.array_equal(first.m, second.m)


def test_trajectory_streams_are_independent():
    a = trajectory_stream(7, 0).random(4)
    b = trajectory_stream(7, 1).random(4)
    assert not np.allclose(a, b)
    assert_array_equal(a, trajectory_stream(7, 0).random(4))


def test_commuting_system_has_no_heat(commuting_system):
    """A frozen outcome chain returns every trajectory to its initial level."""
    rho0 = thermal_state(commuting_system.hamiltonian, 0.5)
    config = ProtocolConfig(
        M=10, waiting=WaitingTimes.exponential(1.0), ensemble_size=2000
    )
    ensemble = run_ensemble(commuting_system, rho0, config)
    assert_array_equal(ensemble.n, ensemble.m)
    assert np.all(ensemble.Q == 0.0)


def test_run_trajectory_record(generic_system, fixed_protocol):
    system, rho0 = generic_system
    record = run_trajectory(system, rho0, fixed_protocol, trajectory_stream(3, 0))
    assert len(record.outcomes) == fixed_protocol.M
    assert all(0 <= k < system.dim for k in record.outcomes)
    expected = system.energies[record.m] - system.energies[record.n]
    assert record.Q == pytest.approx(expected)


def test_outcomes_kept_on_request(generic_system):
    system, rho0 = generic_system
    config = ProtocolConfig(M=4, ensemble_size=300, seed=5, keep_outcomes=True)
    ensemble = run_ensemble(system, rho0, config)
    assert ensemble.outcomes.shape == (300, 4)
    assert outcome_marginal(ensemble).sum() == pytest.approx(1.0)
    assert all(len(r.outcomes) == 4 for r in ensemble.records[:5])


def test_outcome_marginal_needs_outcomes(generic_system):
    system, rho0 = generic_system
    ensemble = run_ensemble(system, rho0, ProtocolConfig(M=2, ensemble_size=50))
    with pytest.raises(ValueError, match="keep_outcomes"):
        outcome_marginal(ensemble)


def test_from_records():
    energies = np.array([0.0, 1.0, 3.0])
    records = [
        TrajectoryRecord.from_indices(0, (1, 2), 2, energies),
        TrajectoryRecord.from_indices(2, (0, 0), 1, energies),
    ]
    ensemble = HeatEnsemble.from_records(records, dim=3)
    assert len(ensemble) == 2
    assert_allclose(ensemble.Q, [3.0, -2.0])
    assert ensemble.records == records
    with pytest.raises(EmptyEnsemble):
        HeatEnsemble.from_records([], dim=3)


def test_frames_and_histograms(generic_system, fixed_protocol):
    system, rho0 = generic_system
    ensemble = run_ensemble(system, rho0, fixed_protocol)
    frame = ensemble.to_frame(system)
    assert list(frame.columns) == ["n", "E_n", "m", "E_m", "Q"]
    assert_allclose(frame["E_m"] - frame["E_n"], frame["Q"])

    histograms = energy_histograms(ensemble, system)
    assert histograms["initial_count"].sum() == fixed_protocol.ensemble_size
    assert histograms["final_probability"].sum() == pytest.approx(1.0)


if __name__ == "__main__":
    pytest.main([__file__])
