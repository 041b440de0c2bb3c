"""Protocol assembly and ensemble runners.

Per-step cycle for the fidelity protocols:
  1. measure:  povm_step on dV = <X> dt + dW / sqrt(8k), dW from the trajectory stream
  2. decide:   decide_feedback on the post-measurement state
  3. rotate:   U_F(theta)

ASLO evolves a single averaged state and emits the (A1, A2) schedule. Replay
applies a schedule to stochastic trajectories as the record-driven angle
  theta = sqrt(8k) A1 dV + A2 dt + recenter
whose trajectory average obeys the averaged (ASLO) equation.

Representations (representation = "auto"):
  w, dicke       -> dicke(N)
  ghz symmetric  -> ghz-sym(N)
  ghz onebody    -> full(3)
"""

import logging
import os
from functools import partial
from multiprocessing import Pool
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np
from scipy.special import comb

from src.errors import (
    CommutingGeneratorError,
    ConfigError,
    EnsembleAbortedError,
    PositivityError,
    ScheduleMismatchError,
    StateValidationError,
    UnlikelyOutcomeError,
    VanishingCurvatureError,
)
from src.paqs import (
    GHZ_CANDIDATES,
    GRID_POINTS,
    RECENTER_LIMIT,
    TOL_EXT,
    compute_coefficients,
    curvature,
    decide_feedback,
    dw_threshold,
    first_derivative,
    global_angle_search,
    rotate,
)
from src.quantum import collective_operator, computational_state, fidelity, two_body_zz_sum, weighted_z_sum
from src.sme import NoiseStream, aslo_step, povm_step, readout
from src.symmetry import (
    MATERIALIZE_LIMIT,
    build_dicke_basis,
    build_ghz_sym_basis,
    dicke_collective_generators,
    out_of_subspace_population,
    project_operator,
    symmetric_operators,
    traceless,
)
from src.types import (
    BasisTag,
    EnsembleStats,
    FeedbackGenerator,
    FeedbackSchedule,
    ObservableSpec,
    Protocol,
    ProtocolConfig,
    TrajectoryResult,
)
from src.utils import config_fingerprint

logger = logging.getLogger(__name__)

ONEBODY_WEIGHTS = (2.0, -1.0, -1.0)   # X_G = 2 Z1 - Z2 - Z3
COLLAPSE_THRESHOLD = 0.5              # final fidelity counted as a projection onto the target
TEA_DICKE_LIMIT = MATERIALIZE_LIMIT   # largest N for dicke-family TEA


def _basis_vector(dim: int, index: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=complex)
    vec[index] = 1.0
    return vec


def _plus_state_dicke(n_qubits: int) -> np.ndarray:
    """|+>^N in Dicke coordinates: sqrt(C(N,k)) / 2^(N/2)."""
    k = np.arange(n_qubits + 1)
    return (np.sqrt(comb(n_qubits, k)) * 2.0 ** (-n_qubits / 2)).astype(complex)


def _grid(config: ProtocolConfig) -> int:
    return config.angle_grid or GRID_POINTS


def _pre_rotate(psi: np.ndarray, generator: FeedbackGenerator, target: np.ndarray, grid: int) -> Tuple[np.ndarray, float]:
    theta = global_angle_search(np.outer(psi, psi.conj()), generator, target, grid)
    return generator.unitary(theta) @ psi, theta


def _build_dicke_family(config: ProtocolConfig) -> Protocol:
    n = config.n_qubits
    excitation = 1 if config.target == "w" else config.excitation
    sym = build_dicke_basis(n)

    if config.representation == "full":
        if n > MATERIALIZE_LIMIT:
            raise ConfigError("representation", f"full space limited to n_qubits <= {MATERIALIZE_LIMIT}")
        tag = BasisTag("full", n)
        X = collective_operator(n, "z")
        H = 0.5 * collective_operator(n, "y")
        psi0 = computational_state("0" * n)
        target = sym.vectors[:, excitation].copy()
        target_index, subspace = None, sym
    else:
        tag = sym.tag
        jz, jy, _ = dicke_collective_generators(n)
        X, H = jz, traceless(0.5 * jy)
        psi0 = _basis_vector(n + 1, 0)
        target = _basis_vector(n + 1, excitation)
        target_index, subspace = excitation, None

    observable = ObservableSpec(X, config.k, tag)
    generator = FeedbackGenerator(H, tag)
    psi0, theta0 = _pre_rotate(psi0, generator, target, _grid(config))
    return Protocol(
        config=config,
        initial=psi0,
        observable=observable,
        generator=generator,
        target=target,
        target_index=target_index,
        subspace=subspace,
        pre_rotation=theta0,
    )


def _build_ghz(config: ProtocolConfig) -> Protocol:
    n = config.n_qubits
    sym = build_ghz_sym_basis(n)

    if config.observable == "onebody-nonsym":
        if n != 3:
            raise ConfigError("observable", "onebody-nonsym is defined for ghz with n_qubits = 3")
        X_full = weighted_z_sum(ONEBODY_WEIGHTS)
        if config.representation == "symmetric":
            # raises ProjectionLeakError: X_G breaks the permutation symmetry
            project_operator(X_full, sym)
        representation = "full"
    else:
        representation = "full" if config.representation == "full" else "ghz-sym"
        X_full = None

    if representation == "full":
        if n > MATERIALIZE_LIMIT:
            raise ConfigError("representation", f"full space limited to n_qubits <= {MATERIALIZE_LIMIT}")
        tag = BasisTag("full", n)
        X = X_full if X_full is not None else two_body_zz_sum(n)
        H = 0.5 * collective_operator(n, "x")
        psi0 = np.full(2 ** n, 2.0 ** (-n / 2), dtype=complex)
        target = sym.vectors[:, 0].copy()
        target_index = None
        subspace = sym if config.observable == "symmetric" else None
    else:
        tag = sym.tag
        zz, _, sx = symmetric_operators(sym)
        X, H = zz, traceless(0.5 * sx)
        psi0 = sym.dicke_isometry.conj().T @ _plus_state_dicke(n)
        target = _basis_vector(sym.dim, 0)
        target_index, subspace = 0, None

    # |+>^N is an eigenvector of the generator, so no pre-rotation changes it.
    # The {0, pi/2} candidates do not apply to the one-body observable
    candidates = None if config.observable == "onebody-nonsym" else GHZ_CANDIDATES
    return Protocol(
        config=config,
        initial=psi0,
        observable=ObservableSpec(X, config.k, tag),
        generator=FeedbackGenerator(H, tag),
        target=target,
        candidates=candidates,
        target_index=target_index,
        subspace=subspace,
    )


def build_protocol(config: ProtocolConfig) -> Protocol:
    """Initial state, observable, generator and target for a config.

    W and Dicke start from |0...0> rotated to the best fidelity U_F(theta) can
    reach. GHZ starts from the full superposition |+>^N.

    Raises:
      ConfigError: combination not supported (onebody-nonsym outside ghz(3),
        full representation above MATERIALIZE_LIMIT)
      ProjectionLeakError: onebody-nonsym with representation = symmetric
    """
    if config.target in ("w", "dicke"):
        if config.observable != "symmetric":
            raise ConfigError("observable", f"{config.target} targets use the symmetric observable")
        protocol = _build_dicke_family(config)
    else:
        protocol = _build_ghz(config)
    logger.debug(
        "built %s(%d) in %s(%d), pre-rotation %.6f rad",
        config.target, config.n_qubits, protocol.basis.kind, protocol.basis.dim, protocol.pre_rotation,
    )
    return protocol


def _measure(protocol: Protocol, rho: np.ndarray, dV: float) -> np.ndarray:
    obs, dt = protocol.observable, protocol.config.dt
    return povm_step(rho, obs.X, obs.k, dt, dV, eig=(obs.eigenvalues, obs.eigenvectors))


def simulate_trajectory(
    protocol: Protocol,
    index: int,
    feedback: str = "tea",
    schedule: Optional[FeedbackSchedule] = None,
) -> TrajectoryResult:
    """One stochastic trajectory on noise stream (seed, index).

    feedback:
      "tea"    -> decide_feedback on every post-measurement state
      "replay" -> theta = sqrt(8k) A1 dV + A2 dt from `schedule`
      "none"   -> measurement only
    Positivity and POVM-likelihood failures abort the trajectory; the partial
    record is returned with aborted=True.
    """
    cfg = protocol.config
    n_steps, dt, k = cfg.n_steps, cfg.dt, cfg.k
    X = protocol.observable.X
    gen, target = protocol.generator, protocol.target
    grid = _grid(cfg)
    full_subspace = protocol.subspace if protocol.basis.kind == "full" else None
    if feedback == "replay":
        assert schedule is not None, "replay needs a schedule"

    dWs = NoiseStream(cfg.seed, index).increments(n_steps, dt)
    rho = protocol.initial_density()
    fid = np.zeros(n_steps + 1)
    theta = np.zeros(n_steps)
    fid[0] = fidelity(rho, target)
    result = TrajectoryResult(index=index, fidelity=fid, theta=theta)

    j = 0
    try:
        for j in range(n_steps):
            dW = dWs[j]
            rho_pre = rho
            dV = readout(rho_pre, X, k, dt, dW)
            rho = _measure(protocol, rho_pre, dV)

            if feedback == "tea":
                decision = decide_feedback(
                    rho, gen, X, k, dt, dW, target,
                    rho_pre=rho_pre,
                    candidates=protocol.candidates,
                    grid=grid,
                    global_check=cfg.global_check,
                )
                angle = decision.theta
                if decision.mode == "large-angle":
                    result.large_angle_steps += 1
                    if protocol.candidates is None:
                        logger.debug("trajectory %d step %d: large-angle theta=%.6f", index, j, angle)
                if cfg.diagnostics and protocol.candidates is None and decision.mode != "skip-commuting":
                    expect_Y = float(np.real(np.trace(np.sqrt(2.0 * k) * X @ rho_pre)))
                    a2_closed = decision.a2 - 2.0 * decision.a1 * expect_Y
                    limit = dw_threshold(rho_pre, gen.H, X, k, target, decision.a1, a2_closed, dt)
                    result.predicted_failures += int(abs(dW) > limit)
                    result.observed_failures += int(decision.mode == "large-angle")
            elif feedback == "replay":
                angle = np.sqrt(8.0 * k) * schedule.a1[j] * dV + schedule.a2[j] * dt + schedule.recenter[j]
            else:
                angle = 0.0

            if angle != 0.0:
                rho = rotate(gen, angle, rho)
            theta[j] = angle
            fid[j + 1] = fidelity(rho, target)
            if full_subspace is not None:
                leak = out_of_subspace_population(rho, full_subspace)
                result.subspace_leak = max(result.subspace_leak, abs(leak))
    except (PositivityError, UnlikelyOutcomeError, StateValidationError) as exc:
        logger.warning("trajectory %d aborted at step %d: %s", index, j, exc)
        result.aborted = True
        result.abort_reason = str(exc)
    return result


def resolve_workers(workers: Optional[int] = None) -> int:
    """PAQS_SIM_WORKERS, then the explicit value, then the CPU count."""
    env = os.environ.get("PAQS_SIM_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError("PAQS_SIM_WORKERS", f"not an integer: {env!r}")
        if value < 1:
            raise ConfigError("PAQS_SIM_WORKERS", "must be >= 1")
        return value
    if workers is not None:
        return max(1, int(workers))
    return os.cpu_count() or 1


def map_trajectories(worker, n_traj: int, workers: int) -> Iterator:
    """Apply `worker` to 0..n_traj-1; results arrive in index order."""
    if workers <= 1 or n_traj <= 1:
        for i in range(n_traj):
            yield worker(i)
        return
    chunksize = max(1, n_traj // (4 * workers))
    with Pool(processes=workers) as pool:
        for item in pool.imap(worker, range(n_traj), chunksize=chunksize):
            yield item


def summarize(results: Iterable[TrajectoryResult], config: ProtocolConfig) -> EnsembleStats:
    """Index-ordered reduction to mean and standard error per step.

    Aborted trajectories are excluded and counted.

    Raises:
      EnsembleAbortedError if no trajectory survived
    """
    n_points = config.n_steps + 1
    total = np.zeros(n_points)
    total_sq = np.zeros(n_points)
    finals, n_kept, n_aborted, n_large = [], 0, 0, 0
    predicted = observed = 0
    max_leak = 0.0
    for r in results:
        if r.aborted:
            n_aborted += 1
            continue
        total += r.fidelity
        total_sq += r.fidelity ** 2
        n_kept += 1
        n_large += int(r.large_angle_steps > 0)
        finals.append(r.fidelity[-1])
        predicted += r.predicted_failures
        observed += r.observed_failures
        max_leak = max(max_leak, r.subspace_leak)

    if n_kept == 0:
        raise EnsembleAbortedError(f"all {n_aborted} trajectories aborted")
    if n_aborted:
        logger.warning("%d of %d trajectories aborted", n_aborted, n_aborted + n_kept)

    mean = total / n_kept
    if n_kept > 1:
        var = np.clip(total_sq / n_kept - mean ** 2, 0.0, None) * n_kept / (n_kept - 1)
        sem = np.sqrt(var / n_kept)
    else:
        sem = np.zeros(n_points)

    diagnostics = {}
    if config.diagnostics:
        diagnostics = {"predicted_failures": predicted, "observed_failures": observed}
    stats = EnsembleStats(
        times=np.arange(n_points) * config.dt,
        mean_fidelity=mean,
        sem=sem,
        n_traj=n_kept,
        n_aborted=n_aborted,
        large_angle_fraction=n_large / n_kept,
        final_fidelities=np.asarray(finals),
        diagnostics=diagnostics,
        subspace_leak=max_leak,
    )
    return stats


def _require_method(config: ProtocolConfig, *methods: str) -> None:
    if config.method not in methods:
        raise ConfigError("protocol", f"expected {' or '.join(methods)}, got {config.method!r}")


def run_tea(config: ProtocolConfig, workers: int = 1) -> EnsembleStats:
    """Trajectory-ensemble-average feedback over config.n_traj trajectories."""
    _require_method(config, "tea")
    if config.target in ("w", "dicke") and config.n_qubits > TEA_DICKE_LIMIT:
        raise ConfigError("n_qubits", f"dicke-family TEA limited to n_qubits <= {TEA_DICKE_LIMIT}; use aslo")
    protocol = build_protocol(config)
    logger.info("TEA %s(%d): %d trajectories, %d steps", config.target, config.n_qubits,
                config.n_traj, config.n_steps)
    worker = partial(simulate_trajectory, protocol, feedback="tea")
    stats = summarize(map_trajectories(worker, config.n_traj, workers), config)
    logger.info("TEA final fidelity %.6f +/- %.6f, large-angle fraction %.4f",
                stats.mean_fidelity[-1], stats.sem[-1], stats.large_angle_fraction)
    return stats


def run_baseline(config: ProtocolConfig, workers: int = 1) -> EnsembleStats:
    """Pre-rotation then measurement only."""
    _require_method(config, "baseline")
    protocol = build_protocol(config)
    logger.info("baseline %s(%d): %d trajectories", config.target, config.n_qubits, config.n_traj)
    worker = partial(simulate_trajectory, protocol, feedback="none")
    return summarize(map_trajectories(worker, config.n_traj, workers), config)


def _aslo_coefficients(rho: np.ndarray, protocol: Protocol, t: float) -> Tuple[float, float, float]:
    """(A1, A2, recentring angle) for the averaged state at time t."""
    obs, gen, target = protocol.observable, protocol.generator, protocol.target
    try:
        a1, a2 = compute_coefficients(rho, gen.H, obs.X, obs.k, target, tol_ext=None)
    except CommutingGeneratorError:
        return 0.0, 0.0, 0.0
    except VanishingCurvatureError as exc:
        shift = global_angle_search(rho, gen, target, _grid(protocol.config))
        log = logger.warning if shift != 0.0 else logger.debug
        log("averaged state re-centred by %.3e rad at t=%.4f us (%s)", shift, t, exc)
    else:
        g = first_derivative(rho, gen.H, target)
        if abs(g) <= TOL_EXT:
            return a1, a2, 0.0
        D = curvature(rho, gen.H, target)
        shift = g / D
        if D < 0 or abs(shift) > RECENTER_LIMIT:
            shift = global_angle_search(rho, gen, target, _grid(protocol.config))
            log = logger.warning if shift != 0.0 else logger.debug
            log("averaged state re-centred by %.3e rad at t=%.4f us (g=%.3e)", shift, t, g)
        else:
            logger.debug("averaged state Newton shift %.3e rad at t=%.4f us", shift, t)

    try:
        a1, a2 = compute_coefficients(rotate(gen, shift, rho), gen.H, obs.X, obs.k, target, tol_ext=None)
    except (CommutingGeneratorError, VanishingCurvatureError):
        a1, a2 = 0.0, 0.0
    return a1, a2, shift


def run_aslo(config: ProtocolConfig) -> Tuple[EnsembleStats, FeedbackSchedule]:
    """Deterministic averaged-state evolution and its (A1, A2) schedule.

    A re-centring rotation, when one is needed, is applied to the averaged
    state and stored in the schedule's recenter column so a replay reproduces it.
    """
    _require_method(config, "aslo")
    protocol = build_protocol(config)
    obs, gen, target = protocol.observable, protocol.generator, protocol.target
    n_steps, dt = config.n_steps, config.dt
    logger.info("ASLO %s(%d), %d steps", config.target, config.n_qubits, n_steps)

    rho = protocol.initial_density()
    fid = np.zeros(n_steps + 1)
    a1s = np.zeros(n_steps)
    a2s = np.zeros(n_steps)
    shifts = np.zeros(n_steps)
    fid[0] = fidelity(rho, target)
    for j in range(n_steps):
        a1, a2, shift = _aslo_coefficients(rho, protocol, j * dt)
        if shift != 0.0:
            rho = rotate(gen, shift, rho)
        rho = aslo_step(rho, obs.X, obs.k, gen.H, a1, a2, dt)
        a1s[j], a2s[j], shifts[j] = a1, a2, shift
        fid[j + 1] = fidelity(rho, target)

    if protocol.target_index is not None:
        success = projective_success_probability(rho, protocol.target_index)
    else:
        success = fidelity(rho, target)
    stats = EnsembleStats(
        times=np.arange(n_steps + 1) * dt,
        mean_fidelity=fid,
        sem=np.zeros(n_steps + 1),
        n_traj=1,
        success_probability=success,
    )
    schedule = FeedbackSchedule(
        times=np.arange(n_steps) * dt,
        a1=a1s,
        a2=a2s,
        fingerprint=config_fingerprint(config),
        recenter=shifts,
    )
    logger.info("ASLO final fidelity %.6f, max|A2| %.3e", fid[-1], float(np.max(np.abs(a2s))) if n_steps else 0.0)
    return stats, schedule


def replay_schedule(schedule: FeedbackSchedule, config: ProtocolConfig, workers: int = 1) -> EnsembleStats:
    """Markovian replay of a precomputed schedule on stochastic trajectories.

    Raises:
      ScheduleMismatchError: fingerprint or length does not match `config`
    """
    expected = config_fingerprint(config)
    if schedule.fingerprint != expected:
        raise ScheduleMismatchError(f"schedule fingerprint {schedule.fingerprint} != config {expected}")
    if len(schedule.times) != config.n_steps:
        raise ScheduleMismatchError(f"schedule has {len(schedule.times)} steps, config needs {config.n_steps}")
    protocol = build_protocol(config)
    logger.info("replay %s(%d): %d trajectories", config.target, config.n_qubits, config.n_traj)
    worker = partial(simulate_trajectory, protocol, feedback="replay", schedule=schedule)
    return summarize(map_trajectories(worker, config.n_traj, workers), config)


def projective_success_probability(rho: np.ndarray, target_index: int) -> float:
    """Born weight of basis vector `target_index` in a non-degenerate symmetric basis."""
    value = float(np.real(rho[target_index, target_index]))
    if not -1e-10 <= value <= 1.0 + 1e-10:
        raise StateValidationError(f"population {value:.3e} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def collapse_statistics(stats: EnsembleStats, threshold: float = COLLAPSE_THRESHOLD) -> Tuple[float, float]:
    """Fraction of trajectories whose final fidelity exceeds `threshold`, with its standard error.

    Measurement-only runs collapse onto X eigenstates, so final fidelities sit
    near 0 or 1 and this fraction estimates the projection probability.
    """
    assert stats.final_fidelities is not None, "no per-trajectory fidelities recorded"
    n = len(stats.final_fidelities)
    p = float(np.mean(stats.final_fidelities > threshold))
    return p, float(np.sqrt(p * (1.0 - p) / n))
