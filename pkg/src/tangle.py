"""Three-tangle feedback on pure three-qubit trajectories.

Residual tangle of a pure state |psi> on qubits A, B, C:
  tau = 4 det(rho_A) - C(rho_AB)^2 - C(rho_AC)^2
with Wootters concurrences C = max(0, l1 - l2 - l3 - l4), l_i the square roots
of the eigenvalues of rho (Y x Y) rho* (Y x Y) in decreasing order.

For a reduced state rho = T T^dagger the l_i are the singular values of
T^T (Y x Y) T, which avoids square roots of round-off-sized eigenvalues.

Per-step cycle (control BEFORE measurement, the state stays pure):
  theta* = argmax_theta  E_dV[ tau( Omega_dV U_F(theta) psi / norm ) ]
  psi'   = Omega_dV U_F(theta*) psi / norm,  dV sampled after theta* is fixed
The outcome average is a Gaussian mixture over the eigenvalues of X, done by
Gauss-Hermite quadrature per mixture component.
"""

import logging
from dataclasses import replace
from functools import partial
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
from numpy.polynomial.hermite import hermgauss

from src.errors import ConfigError, PositivityError, StateValidationError, UnlikelyOutcomeError
from src.paqs import argmax_smallest_angle, golden_refine, wrap_angle
from src.protocols import build_protocol, map_trajectories, summarize
from src.quantum import PAULI_Y, fidelity
from src.sme import NoiseStream, povm_sample_outcome, povm_step
from src.types import EnsembleStats, FeedbackGenerator, ObservableSpec, Protocol, ProtocolConfig, TrajectoryResult

logger = logging.getLogger(__name__)

TANGLE_GRID = 128          # angle samples over one period
TANGLE_PERIOD = np.pi      # collective-X rotations repeat up to a local bit flip
ANGLE_XTOL = 1e-6          # golden refinement resolution
DEFAULT_ORDER = 16         # Gauss-Hermite nodes per mixture component
MIN_ORDER = 8
RANGE_TOL = 1e-10          # tolerated excursion of tau outside [0, 1]
EIGEN_DECIMALS = 10        # eigenvalues of X equal to this many decimals share a component
HISTOGRAM_SNAPSHOTS = 20
HISTOGRAM_BINS = 50

SPIN_FLIP = np.kron(PAULI_Y, PAULI_Y).real


def _flip_singular_values(T: np.ndarray) -> np.ndarray:
    """Decreasing Wootters l_i of rho = T T^dagger; T has shape (..., 4, r)."""
    S = np.swapaxes(T, -1, -2) @ SPIN_FLIP @ T
    return np.linalg.svd(S, compute_uv=False)


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise StateValidationError(f"concurrence needs a 4x4 state, got {rho.shape}")
    evals, evecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    T = evecs * np.sqrt(np.clip(evals, 0.0, None))
    lam = np.sort(_flip_singular_values(T))[::-1]
    lam = np.concatenate([lam, np.zeros(max(0, 4 - len(lam)))])
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def three_tangle_batch(psis: np.ndarray) -> np.ndarray:
    """Three-tangle of many pure states at once; psis has shape (B, 8)."""
    psis = np.asarray(psis, dtype=complex)
    psis = psis / np.linalg.norm(psis, axis=1, keepdims=True)
    B = psis.shape[0]

    M = psis.reshape(B, 2, 4)
    rho_a = M @ np.conj(np.swapaxes(M, -1, -2))
    det_a = np.real(rho_a[:, 0, 0] * rho_a[:, 1, 1] - rho_a[:, 0, 1] * rho_a[:, 1, 0])

    T_ab = psis.reshape(B, 4, 2)
    T_ac = psis.reshape(B, 2, 2, 2).transpose(0, 1, 3, 2).reshape(B, 4, 2)
    c_ab = np.clip(-np.diff(_flip_singular_values(T_ab), axis=-1)[:, 0], 0.0, None)
    c_ac = np.clip(-np.diff(_flip_singular_values(T_ac), axis=-1)[:, 0], 0.0, None)

    tau = 4.0 * det_a - c_ab ** 2 - c_ac ** 2
    assert np.all(tau > -RANGE_TOL) and np.all(tau < 1.0 + RANGE_TOL), \
        f"three-tangle out of range: [{tau.min():.3e}, {tau.max():.3e}]"
    return np.clip(tau, 0.0, 1.0)


def three_tangle(psi: np.ndarray) -> float:
    """Residual tangle of a pure three-qubit state (1 for GHZ, 0 for W)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (8,):
        raise StateValidationError(f"three_tangle needs an 8-vector, got {psi.shape}")
    return float(three_tangle_batch(psi[None, :])[0])


def _outcome_nodes(
    observable: ObservableSpec,
    dt: float,
    order: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature outcomes dV for each distinct eigenvalue of X.

    Returns:
      (groups, dV, weights): groups maps each eigenvector of X to its
      component, dV is (n_components, order), weights is (order,) summing to 1
    """
    levels, groups = np.unique(np.round(observable.eigenvalues, EIGEN_DECIMALS), return_inverse=True)
    sigma = np.sqrt(dt / (8.0 * observable.k))
    nodes, weights = hermgauss(order)
    dV = levels[:, None] * dt + np.sqrt(2.0) * sigma * nodes[None, :]
    return groups, dV, weights / np.sqrt(np.pi)


def _expected_tangles(
    psi: np.ndarray,
    thetas: np.ndarray,
    observable: ObservableSpec,
    generator: FeedbackGenerator,
    dt: float,
    order: int,
) -> np.ndarray:
    """Outcome-averaged post-measurement tangle for every angle in `thetas`."""
    k = observable.k
    V = observable.eigenvectors
    groups, dV, weights = _outcome_nodes(observable, dt, order)
    n_comp = dV.shape[0]

    # rotated states in the eigenbasis of X, (G, d)
    phases = np.exp(-1j * np.outer(thetas, generator.eigenvalues))
    rotated = (phases * (generator.eigenvectors.conj().T @ psi)[None, :]) @ generator.eigenvectors.T
    coeffs = rotated @ V.conj()
    populations = np.abs(coeffs) ** 2
    comp_weight = np.zeros((len(thetas), n_comp))
    np.add.at(comp_weight.T, groups, populations.T)

    # Omega_dV is diagonal in the eigenbasis: amplitude exp(-2k dt (dV/dt - lambda)^2)
    lam = observable.eigenvalues
    kraus = np.exp(-2.0 * k * dt * (dV[:, :, None] / dt - lam[None, None, :]) ** 2)   # (C, Q, d)
    post = coeffs[:, None, None, :] * kraus[None, :, :, :]                          # (G, C, Q, d)
    G, C, Q, d = post.shape
    post_full = post.reshape(-1, d) @ V.T
    tau = three_tangle_batch(post_full).reshape(G, C, Q)
    return np.einsum("gc,gcq,q->g", comp_weight, tau, weights)


def expected_tangle(
    psi: np.ndarray,
    theta: float,
    observable: ObservableSpec,
    generator: FeedbackGenerator,
    dt: float,
    order: int = DEFAULT_ORDER,
) -> float:
    """E over dV of tau(Omega_dV U_F(theta) psi / norm), by Gauss-Hermite quadrature.

    Parameters:
      psi: Pure three-qubit state (8-vector)
      theta: Control angle applied before the measurement
      observable: Measured X and strength k
      generator: Feedback generator H_F
      dt: Step (us)
      order: Nodes per mixture component, >= MIN_ORDER
    """
    if order < MIN_ORDER:
        raise ValueError(f"quadrature order must be >= {MIN_ORDER}, got {order}")
    psi = np.asarray(psi, dtype=complex)
    return float(_expected_tangles(psi, np.array([theta], dtype=float), observable, generator, dt, order)[0])


def optimal_tangle_angle(
    psi: np.ndarray,
    observable: ObservableSpec,
    generator: FeedbackGenerator,
    dt: float,
    grid: int = TANGLE_GRID,
    order: int = DEFAULT_ORDER,
) -> float:
    """Grid argmax of the expected tangle over [0, pi), refined by golden section.

    Ties break to the smallest |theta|; the result lies in (-pi/2, pi/2].
    """
    thetas = np.linspace(0.0, TANGLE_PERIOD, grid, endpoint=False)
    values = _expected_tangles(psi, thetas, observable, generator, dt, order)
    i = argmax_smallest_angle(thetas, values, TANGLE_PERIOD)
    centre = wrap_angle(thetas[i], TANGLE_PERIOD)
    step = TANGLE_PERIOD / grid

    def objective(theta: float) -> float:
        return float(_expected_tangles(psi, np.array([theta]), observable, generator, dt, order)[0])

    best = golden_refine(objective, centre - step, centre, centre + step, xtol=ANGLE_XTOL)
    return wrap_angle(best, TANGLE_PERIOD)


def tangle_step(
    psi: np.ndarray,
    observable: ObservableSpec,
    generator: FeedbackGenerator,
    dt: float,
    noise: Union[NoiseStream, float],
    grid: int = TANGLE_GRID,
    order: int = DEFAULT_ORDER,
) -> Tuple[np.ndarray, float]:
    """Rotate by the tangle-optimal angle, then measure once.

    Returns:
      (psi', theta*)
    """
    if grid < 64:
        raise ValueError(f"angle grid must have >= 64 points, got {grid}")
    theta = optimal_tangle_angle(psi, observable, generator, dt, grid, order)
    controlled = generator.unitary(theta) @ psi
    X, k = observable.X, observable.k
    dV = povm_sample_outcome(controlled, X, k, dt, noise)
    psi_next = povm_step(controlled, X, k, dt, dV, eig=(observable.eigenvalues, observable.eigenvectors))
    return psi_next, theta


def tangle_trajectory(protocol: Protocol, index: int) -> TrajectoryResult:
    """One tangle-feedback trajectory on noise stream (seed, index)."""
    cfg = protocol.config
    n_steps, dt = cfg.n_steps, cfg.dt
    grid = cfg.angle_grid or TANGLE_GRID
    obs, gen, target = protocol.observable, protocol.generator, protocol.target
    dWs = NoiseStream(cfg.seed, index).increments(n_steps, dt)

    psi = protocol.initial.copy()
    fid = np.zeros(n_steps + 1)
    tau = np.zeros(n_steps + 1)
    theta = np.zeros(n_steps)
    fid[0], tau[0] = fidelity(psi, target), three_tangle(psi)
    result = TrajectoryResult(index=index, fidelity=fid, theta=theta, tangle=tau)

    j = 0
    try:
        for j in range(n_steps):
            psi, theta[j] = tangle_step(psi, obs, gen, dt, dWs[j], grid, cfg.quadrature_order)
            fid[j + 1] = fidelity(psi, target)
            tau[j + 1] = three_tangle(psi)
    except (PositivityError, UnlikelyOutcomeError, StateValidationError) as exc:
        logger.warning("tangle trajectory %d aborted at step %d: %s", index, j, exc)
        result.aborted = True
        result.abort_reason = str(exc)
    return result


def angle_histograms(
    results: List[TrajectoryResult],
    config: ProtocolConfig,
    snapshots: int = HISTOGRAM_SNAPSHOTS,
    bins: int = HISTOGRAM_BINS,
) -> pd.DataFrame:
    """Normalized histograms of the control angle, folded into [0, pi), at evenly spaced steps."""
    kept = [r for r in results if not r.aborted]
    assert kept, "no trajectories to histogram"
    steps = np.unique(np.round(np.linspace(0, config.n_steps - 1, snapshots)).astype(int))
    edges = np.linspace(0.0, TANGLE_PERIOD, bins + 1)
    rows = []
    for step in steps:
        angles = np.array([r.theta[step] for r in kept]) % TANGLE_PERIOD
        angles[angles > TANGLE_PERIOD - ANGLE_XTOL] = 0.0
        counts, _ = np.histogram(angles, bins=edges)
        freq = counts / len(kept)
        assert abs(freq.sum() - 1.0) < 1e-12, "histogram does not normalize"
        for lo, hi, f in zip(edges[:-1], edges[1:], freq):
            rows.append((step * config.dt, lo, hi, f))
    return pd.DataFrame(rows, columns=["snapshot_time_us", "bin_lo_rad", "bin_hi_rad", "frequency"])


def run_tangle(config: ProtocolConfig, workers: int = 1) -> EnsembleStats:
    """Tangle-feedback ensemble for ghz(3): mean tangle, GHZ fidelity and angle histograms."""
    if config.method != "tangle":
        raise ConfigError("protocol", f"expected tangle, got {config.method!r}")
    if config.target != "ghz" or config.n_qubits != 3:
        raise ConfigError("target", "tangle protocol is defined for ghz with n_qubits = 3")
    if config.quadrature_order < MIN_ORDER:
        raise ConfigError("quadrature_order", f"must be >= {MIN_ORDER}")
    protocol = build_protocol(replace(config, representation="full"))
    logger.info("tangle %s observable: %d trajectories, %d steps", config.observable,
                config.n_traj, config.n_steps)

    results = list(map_trajectories(partial(tangle_trajectory, protocol), config.n_traj, workers))
    stats = summarize(results, config)
    kept = [r.tangle for r in results if not r.aborted]
    taus = np.vstack(kept)
    stats.mean_tangle = taus.mean(axis=0)
    stats.tangle_sem = taus.std(axis=0, ddof=1) / np.sqrt(len(kept)) if len(kept) > 1 else np.zeros(taus.shape[1])
    stats.histograms = angle_histograms(results, config, config.snapshots, config.bins)
    logger.info("tangle final mean %.6f +/- %.6f, GHZ fidelity %.6f",
                stats.mean_tangle[-1], stats.tangle_sem[-1], stats.mean_fidelity[-1])
    return stats
