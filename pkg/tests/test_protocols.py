import logging

import numpy as np
import pytest

from src.errors import ConfigError, EnsembleAbortedError, ProjectionLeakError, ScheduleMismatchError
from src.paqs import GHZ_CANDIDATES, GRID_POINTS, global_angle_search, rotate
from src.protocols import (
    _aslo_coefficients,
    build_protocol,
    collapse_statistics,
    projective_success_probability,
    replay_schedule,
    resolve_workers,
    run_aslo,
    run_baseline,
    run_tea,
    simulate_trajectory,
    summarize,
)
from src.types import FeedbackSchedule, ProtocolConfig, TrajectoryResult


def make_config(**overrides):
    values = dict(method="tea", target="w", n_qubits=3, k=1.0, dt=1e-3, t_final=0.2, n_traj=4, seed=7)
    values.update(overrides)
    return ProtocolConfig(**values)


def test_w_protocol_starts_at_four_ninths():
    """Pre-rotated |000> has fidelity 4/9 with W in both representations."""
    for representation in ("auto", "full"):
        protocol = build_protocol(make_config(representation=representation))
        rho = protocol.initial_density()
        f0 = float(np.real(protocol.target.conj() @ rho @ protocol.target))
        assert np.isclose(f0, 4 / 9, atol=1e-9), representation
        assert np.isclose(abs(protocol.pre_rotation), 2 * np.arcsin(1 / np.sqrt(3)), atol=1e-6)


def test_ghz_protocol_initial_state():
    """|+++> lifts to (1/2, sqrt(3)/2) in ghz-sym(3) with no pre-rotation."""
    protocol = build_protocol(make_config(target="ghz"))
    assert protocol.basis.kind == "ghz-sym"
    assert np.allclose(protocol.initial, [0.5, np.sqrt(3) / 2])
    assert protocol.pre_rotation == 0.0
    assert protocol.candidates == GHZ_CANDIDATES


def test_build_protocol_rejects_unsupported_combinations():
    """Observable and representation constraints."""
    with pytest.raises(ConfigError) as exc:
        build_protocol(make_config(observable="onebody-nonsym"))
    assert exc.value.key == "observable"
    with pytest.raises(ConfigError):
        build_protocol(make_config(target="ghz", n_qubits=4, observable="onebody-nonsym"))
    with pytest.raises(ProjectionLeakError):
        build_protocol(make_config(target="ghz", observable="onebody-nonsym", representation="symmetric"))
    with pytest.raises(ConfigError) as exc:
        build_protocol(make_config(n_qubits=13, representation="full"))
    assert exc.value.key == "representation"


def test_onebody_observable_runs_in_full_space():
    """The symmetry-breaking observable falls back to the 8-dim register."""
    protocol = build_protocol(make_config(target="ghz", observable="onebody-nonsym"))
    assert protocol.basis.kind == "full"
    assert protocol.basis.dim == 8
    result = simulate_trajectory(protocol, 0)
    assert not result.aborted


def test_tea_trajectory_is_deterministic_and_bounded():
    """Same (seed, index) reproduces the record; fidelities stay in [0, 1]."""
    protocol = build_protocol(make_config())
    a = simulate_trajectory(protocol, 3)
    b = simulate_trajectory(protocol, 3)
    assert not a.aborted
    assert np.array_equal(a.fidelity, b.fidelity)
    assert np.array_equal(a.theta, b.theta)
    assert np.all((a.fidelity >= 0) & (a.fidelity <= 1))
    assert np.isclose(a.fidelity[0], 4 / 9, atol=1e-9)
    assert len(a.fidelity) == 201 and len(a.theta) == 200


def test_ghz_feedback_uses_candidate_angles_only():
    """Every GHZ feedback angle is 0 or pi/2."""
    protocol = build_protocol(make_config(target="ghz", t_final=0.3))
    result = simulate_trajectory(protocol, 1)
    assert not result.aborted
    allowed = np.isclose(result.theta[:, None], np.array(GHZ_CANDIDATES)[None, :]).any(axis=1)
    assert allowed.all()


def test_full_and_symmetric_ghz_trajectories_agree():
    """Identical noise drives identical fidelities in 8 and 2 dimensions."""
    sym = build_protocol(make_config(target="ghz", t_final=0.2))
    full = build_protocol(make_config(target="ghz", t_final=0.2, representation="full"))
    for index in range(3):
        a = simulate_trajectory(sym, index)
        b = simulate_trajectory(full, index)
        assert np.max(np.abs(a.fidelity - b.fidelity)) < 1e-8
        assert b.subspace_leak < 1e-8


def test_full_space_w_stays_symmetric():
    """Symmetric measurement and feedback keep a full-space W run in the Dicke span."""
    protocol = build_protocol(make_config(representation="full", t_final=0.1))
    result = simulate_trajectory(protocol, 0)
    assert not result.aborted
    assert result.subspace_leak < 1e-8


def test_run_tea_small_ensemble():
    """Ensemble statistics for a short W run."""
    stats = run_tea(make_config(n_traj=6))
    assert stats.n_traj == 6 and stats.n_aborted == 0
    assert np.isclose(stats.mean_fidelity[0], 4 / 9, atol=1e-9)
    assert np.isclose(stats.sem[0], 0.0, atol=1e-12)
    assert np.all(stats.mean_fidelity <= 1.0)
    assert len(stats.times) == len(stats.mean_fidelity) == 201


def test_runners_check_method_and_size():
    """Wrong method and oversized Dicke TEA are configuration errors."""
    with pytest.raises(ConfigError):
        run_tea(make_config(method="aslo"))
    with pytest.raises(ConfigError) as exc:
        run_tea(make_config(target="dicke", n_qubits=13, excitation=6))
    assert exc.value.key == "n_qubits"


def test_aslo_improves_w_fidelity():
    """The averaged state climbs from 4/9; success probability is the final population."""
    stats, schedule = run_aslo(make_config(method="aslo", t_final=1.0))
    assert stats.mean_fidelity[-1] > stats.mean_fidelity[0] + 0.05
    assert np.isclose(stats.success_probability, stats.mean_fidelity[-1])
    assert len(schedule.a1) == 1000
    assert np.all(np.isfinite(schedule.a2))


def test_half_filled_three_qubits_mirrors_w():
    """dicke(3, 2) is the reflection of W(3): same fidelity, |A1|, |A2| and re-centring."""
    w_stats, w_sched = run_aslo(make_config(method="aslo", t_final=0.3))
    d_stats, d_sched = run_aslo(make_config(method="aslo", target="dicke", excitation=2, t_final=0.3))
    assert np.allclose(w_stats.mean_fidelity, d_stats.mean_fidelity, atol=1e-9)
    assert np.allclose(np.abs(w_sched.a1), np.abs(d_sched.a1), atol=1e-7)
    assert np.allclose(np.abs(w_sched.a2), np.abs(d_sched.a2), atol=1e-5)
    assert np.allclose(np.abs(w_sched.recenter), np.abs(d_sched.recenter), atol=1e-5)


def test_replay_rejects_foreign_schedule():
    """Fingerprint and length must match the config."""
    config = make_config(method="aslo", t_final=0.1)
    _, schedule = run_aslo(config)
    with pytest.raises(ScheduleMismatchError):
        replay_schedule(schedule, make_config(method="aslo", t_final=0.1, k=2.0))
    short = FeedbackSchedule(schedule.times[:-1], schedule.a1[:-1], schedule.a2[:-1], schedule.fingerprint)
    with pytest.raises(ScheduleMismatchError):
        replay_schedule(short, config)


def test_replay_runs_on_matching_schedule():
    """A schedule replays on the config that produced it; the seed is not part of the match."""
    config = make_config(method="aslo", t_final=0.1, n_traj=4)
    _, schedule = run_aslo(config)
    stats = replay_schedule(schedule, make_config(method="aslo", t_final=0.1, n_traj=4, seed=99))
    assert stats.n_aborted == 0
    assert np.isclose(stats.mean_fidelity[0], 4 / 9, atol=1e-9)


def test_resolve_workers(monkeypatch):
    """Environment override, explicit value, validation."""
    monkeypatch.delenv("PAQS_SIM_WORKERS", raising=False)
    assert resolve_workers(2) == 2
    assert resolve_workers(0) == 1
    assert resolve_workers() >= 1
    monkeypatch.setenv("PAQS_SIM_WORKERS", "3")
    assert resolve_workers(8) == 3
    for bad in ("0", "many"):
        monkeypatch.setenv("PAQS_SIM_WORKERS", bad)
        with pytest.raises(ConfigError):
            resolve_workers()


def test_summarize_excludes_aborted_trajectories():
    """Aborted records are counted, not averaged; none surviving is an error."""
    config = make_config(t_final=0.002)
    good = TrajectoryResult(index=0, fidelity=np.array([0.2, 0.4, 0.6]), theta=np.zeros(2))
    other = TrajectoryResult(index=1, fidelity=np.array([0.4, 0.6, 0.8]), theta=np.zeros(2))
    bad = TrajectoryResult(index=2, fidelity=np.zeros(3), theta=np.zeros(2), aborted=True)
    stats = summarize([good, bad, other], config)
    assert stats.n_traj == 2 and stats.n_aborted == 1
    assert np.allclose(stats.mean_fidelity, [0.3, 0.5, 0.7])
    assert np.allclose(stats.sem, 0.1)
    with pytest.raises(EnsembleAbortedError):
        summarize([bad], config)


def test_projective_success_probability():
    """Diagonal population with a range check."""
    rho = np.diag([0.1, 0.6, 0.3, 0.0]).astype(complex)
    assert projective_success_probability(rho, 1) == pytest.approx(0.6)


@pytest.mark.slow
def test_measurement_only_collapses_with_born_weight():
    """Without feedback, W(3) is reached with probability 4/9."""
    stats = run_baseline(make_config(method="baseline", t_final=2.0, n_traj=200, seed=11))
    p, sem = collapse_statistics(stats)
    assert abs(p - 4 / 9) < 4 * sem + 0.02, f"collapse probability {p:.3f} +/- {sem:.3f}"


def test_dicke_aslo_reaches_high_fidelity():
    """The averaged state holds dicke(9, 4) above 0.9 instead of draining to the extremes."""
    stats, schedule = run_aslo(make_config(method="aslo", target="dicke", n_qubits=9, excitation=4, t_final=1.0))
    assert stats.mean_fidelity[-1] > 0.9
    assert stats.mean_fidelity[500:].min() > 0.9
    assert np.all(np.isfinite(schedule.a1))


def test_onebody_ghz_uses_local_rule():
    """Only the symmetric GHZ observable restricts feedback to the {0, pi/2} candidates."""
    assert build_protocol(make_config(target="ghz", observable="onebody-nonsym")).candidates is None
    assert build_protocol(make_config(target="ghz")).candidates == GHZ_CANDIDATES


@pytest.mark.slow
def test_onebody_ghz_tea_stays_low():
    """The symmetry-breaking observable keeps the GHZ(3) ensemble mean below 0.6."""
    stats = run_tea(make_config(target="ghz", observable="onebody-nonsym", t_final=1.0, n_traj=40, seed=3))
    assert stats.n_aborted == 0
    assert stats.mean_fidelity.max() < 0.6


def test_measurement_only_mean_fidelity_is_conserved():
    """Without feedback the mean fidelity with an X eigenstate stays at its initial 4/9."""
    stats = run_baseline(make_config(method="baseline", t_final=0.3, n_traj=200, seed=5))
    idx = np.arange(0, len(stats.mean_fidelity), 30)
    assert np.isclose(stats.mean_fidelity[0], 4 / 9, atol=1e-9)
    gap = np.abs(stats.mean_fidelity[idx] - 4 / 9) - 4 * stats.sem[idx]
    assert gap.max() < 1e-3


def test_replay_average_tracks_aslo():
    """Replaying the schedule on trajectories averages back to the ASLO fidelity."""
    config = make_config(method="aslo", t_final=0.3, n_traj=200, seed=13)
    aslo, schedule = run_aslo(config)
    replay = replay_schedule(schedule, config)
    assert replay.n_aborted == 0
    idx = np.arange(0, len(aslo.mean_fidelity), 30)
    gap = np.abs(replay.mean_fidelity[idx] - aslo.mean_fidelity[idx]) - 4 * replay.sem[idx]
    assert gap.max() < 0.01


def test_aslo_recentres_when_curvature_vanishes(caplog):
    """From |111>, W curvature is zero; the global search jump is applied and logged."""
    protocol = build_protocol(make_config(method="aslo"))
    rho = np.zeros((4, 4), dtype=complex)
    rho[3, 3] = 1.0
    with caplog.at_level(logging.WARNING, logger="src.protocols"):
        a1, a2, shift = _aslo_coefficients(rho, protocol, 0.0)
    expected = global_angle_search(rho, protocol.generator, protocol.target, GRID_POINTS)
    assert shift != 0.0
    assert shift == pytest.approx(expected)
    after = rotate(protocol.generator, shift, rho)
    assert np.real(protocol.target.conj() @ after @ protocol.target) > 0.4
    assert np.isfinite(a1) and np.isfinite(a2)
    assert any("re-centred" in r.getMessage() for r in caplog.records)


def test_aslo_logs_nothing_at_a_fidelity_maximum(caplog):
    """The pre-rotated W start needs no re-centring and raises no warning."""
    protocol = build_protocol(make_config(method="aslo"))
    with caplog.at_level(logging.WARNING, logger="src.protocols"):
        _, _, shift = _aslo_coefficients(protocol.initial_density(), protocol, 0.0)
    assert shift == 0.0
    assert not caplog.records
