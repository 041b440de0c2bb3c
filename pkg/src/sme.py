"""Time steppers for continuously measured qubit registers.

Measurement record and conditioned evolution (H_S = 0, perfect detection):
  dV   = <X> dt + dW / sqrt(8k)
  drho = 2k D[X]rho dt + sqrt(2k) H[X]rho dW

Exact Gaussian Kraus step for one outcome dV:
  Omega = (4k / (pi dt))^(1/4) exp[-2k dt (dV/dt - X)^2]

Locally optimal control with Y = sqrt(2k) X and feedback H_F:
  drho = D[Y]rho dt + H[Y]rho dW - i(A1 dW + A2 dt)[H_F, rho]
         + A1^2 D[H_F]rho dt - i A1 [H_F, Y rho + rho Y^dagger] dt
The averaged (ASLO) state drops every dW term. Its drift is of Lindblad form,
  D[L]rho - i[G, rho],  L = Y - i A1 H_F,  G = A2 H_F + A1 {H_F, Y}/2
and is stepped with the first-order Kraus pair (I - i K dt, sqrt(dt) L),
K = G - i L^dagger L / 2, completed to a trace-preserving map by S^(-1/2).

CRITICAL REQUIREMENTS:
1. Euler-Maruyama order (Kraus form for POVM and averaged steps); every step is
   renormalized by its trace
2. Positivity is monitored, never repaired (PositivityError aborts a trajectory)
3. Noise comes from NoiseStream only - NO global RNG state
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from numpy.polynomial.hermite import hermgauss

from src.errors import UnlikelyOutcomeError
from src.quantum import check_positivity, commutator, dissipator, innovation, normalize_density

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3          # us, at k = 1/us
DEFAULT_K = 1.0            # 1/us
TRACE_DRIFT_TOL = 1e-8     # |Tr - 1| before renormalization
MIN_LIKELIHOOD = 1e-300    # POVM outcome rejection threshold

Spectrum = Tuple[np.ndarray, np.ndarray]


@dataclass
class NoiseStream:
    """Wiener increments for one trajectory.

    The stream is keyed on (master_seed, trajectory_index); its j-th draw is the
    variate of step j, so results do not depend on how trajectories are
    scheduled across workers.
    """
    master_seed: int
    trajectory_index: int
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.trajectory_index,))
        self._rng = np.random.default_rng(seq)

    def increment(self, dt: float) -> float:
        return float(self._rng.standard_normal() * np.sqrt(dt))

    def increments(self, n_steps: int, dt: float) -> np.ndarray:
        return self._rng.standard_normal(n_steps) * np.sqrt(dt)


def spectrum(X: np.ndarray) -> Spectrum:
    evals, evecs = np.linalg.eigh(np.asarray(X, dtype=complex))
    return evals, evecs


def _finish(rho_new: np.ndarray, check: bool) -> np.ndarray:
    drift = abs(np.real(np.trace(rho_new)) - 1.0)
    assert drift < TRACE_DRIFT_TOL, f"trace drift {drift:.3e} before renormalization"
    rho_new = normalize_density(rho_new)
    if check:
        check_positivity(rho_new)
    return rho_new


def readout(rho: np.ndarray, X: np.ndarray, k: float, dt: float, dW: float) -> float:
    """Voltage increment dV = <X> dt + dW / sqrt(8k), in units of time."""
    mean = float(np.real(np.trace(X @ rho)))
    return mean * dt + dW / np.sqrt(8.0 * k)


def sme_step(
    rho: np.ndarray,
    X: np.ndarray,
    k: float,
    dt: float,
    dW: float,
    check: bool = True,
) -> np.ndarray:
    """One conditioned Euler-Maruyama step, renormalized."""
    drho = 2.0 * k * dissipator(X, rho) * dt + np.sqrt(2.0 * k) * innovation(X, rho) * dW
    return _finish(rho + drho, check)


def povm_kraus(
    X: np.ndarray,
    k: float,
    dt: float,
    dV: float,
    eig: Optional[Spectrum] = None,
) -> np.ndarray:
    """Gaussian Kraus operator Omega_dV, built in the eigenbasis of X."""
    evals, evecs = eig if eig is not None else spectrum(X)
    prefactor = (4.0 * k / (np.pi * dt)) ** 0.25
    weights = prefactor * np.exp(-2.0 * k * dt * (dV / dt - evals) ** 2)
    return (evecs * weights) @ evecs.conj().T


def povm_step(
    rho: np.ndarray,
    X: np.ndarray,
    k: float,
    dt: float,
    dV: float,
    eig: Optional[Spectrum] = None,
    check: bool = True,
) -> np.ndarray:
    """Omega rho Omega^dagger / Tr(...); a vector input is stepped as a pure state.

    Raises:
      UnlikelyOutcomeError if the outcome likelihood is below MIN_LIKELIHOOD
    """
    omega = povm_kraus(X, k, dt, dV, eig)
    if rho.ndim == 1:
        psi = omega @ rho
        likelihood = float(np.real(np.vdot(psi, psi)))
        if likelihood < MIN_LIKELIHOOD:
            raise UnlikelyOutcomeError(f"outcome dV={dV:.3e} has likelihood {likelihood:.3e}")
        return psi / np.sqrt(likelihood)
    out = omega @ rho @ omega.conj().T
    likelihood = float(np.real(np.trace(out)))
    if likelihood < MIN_LIKELIHOOD:
        raise UnlikelyOutcomeError(f"outcome dV={dV:.3e} has likelihood {likelihood:.3e}")
    out = normalize_density(out)
    if check:
        check_positivity(out)
    return out


def povm_sample_outcome(
    rho: np.ndarray,
    X: np.ndarray,
    k: float,
    dt: float,
    noise: Union[NoiseStream, float],
) -> float:
    """Sample dV by drawing dW ~ N(0, dt) and forming the readout.

    `noise` is a NoiseStream or an already drawn Wiener increment.
    """
    dW = noise.increment(dt) if isinstance(noise, NoiseStream) else float(noise)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    return readout(rho, X, k, dt, dW)


def povm_completeness(X: np.ndarray, k: float, dt: float, order: int = 64) -> np.ndarray:
    """Integral of Omega^dagger Omega over dV by Gauss-Hermite quadrature; equals I."""
    evals, evecs = spectrum(X)
    sigma = np.sqrt(dt / (8.0 * k))
    center = float(np.mean(evals)) * dt
    nodes, weights = hermgauss(order)
    total = np.zeros_like(evecs)
    for t, w in zip(nodes, weights):
        dV = center + np.sqrt(2.0) * sigma * t
        omega = povm_kraus(X, k, dt, dV, (evals, evecs))
        total += np.sqrt(2.0) * sigma * w * np.exp(t ** 2) * (omega.conj().T @ omega)
    return total


def _feedback_drift(
    rho: np.ndarray,
    Y: np.ndarray,
    H: np.ndarray,
    A1: float,
    A2: float,
) -> np.ndarray:
    Yrho = Y @ rho + rho @ Y.conj().T
    return (
        dissipator(Y, rho)
        - 1j * A2 * commutator(H, rho)
        + A1 ** 2 * dissipator(H, rho)
        - 1j * A1 * commutator(H, Yrho)
    )


def aslo_kraus(
    X: np.ndarray,
    k: float,
    H_F: np.ndarray,
    A1: float,
    A2: float,
    dt: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Trace-preserving Kraus pair for one averaged-state step.

    The first-order pair M0 = I - i K dt, M1 = sqrt(dt) L sums to
    S = I + dt^2 K^dagger K; both are right-multiplied by S^(-1/2).
    """
    Y = np.sqrt(2.0 * k) * np.asarray(X, dtype=complex)
    H = np.asarray(H_F, dtype=complex)
    L = Y - 1j * A1 * H
    G = A2 * H + 0.5 * A1 * (H @ Y + Y @ H)
    K = G - 0.5j * (L.conj().T @ L)
    M0 = np.eye(H.shape[0]) - 1j * dt * K
    M1 = np.sqrt(dt) * L
    S = M0.conj().T @ M0 + M1.conj().T @ M1
    evals, evecs = np.linalg.eigh(0.5 * (S + S.conj().T))
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.conj().T
    return M0 @ inv_sqrt, M1 @ inv_sqrt


def aslo_step(
    rho_bar: np.ndarray,
    X: np.ndarray,
    k: float,
    H_F: np.ndarray,
    A1: float,
    A2: float,
    dt: float,
    check: bool = True,
) -> np.ndarray:
    """Averaged-state step: the controlled SME with the dW terms dropped.

    Agrees with rho_bar + drift * dt to O(dt^2); the drift is linear in
    rho_bar, so this is also the trajectory average of a record-driven replay.
    """
    M0, M1 = aslo_kraus(X, k, H_F, A1, A2, dt)
    out = M0 @ rho_bar @ M0.conj().T + M1 @ rho_bar @ M1.conj().T
    return _finish(out, check)


def controlled_sme_step(
    rho: np.ndarray,
    X: np.ndarray,
    k: float,
    H_F: np.ndarray,
    A1: float,
    A2: float,
    dt: float,
    dW: float,
    check: bool = True,
) -> np.ndarray:
    """Conditioned step under the feedback angle A1 dW + A2 dt, to Ito order."""
    Y = np.sqrt(2.0 * k) * X
    drho = (
        _feedback_drift(rho, Y, H_F, A1, A2) * dt
        + innovation(Y, rho) * dW
        - 1j * A1 * dW * commutator(H_F, rho)
    )
    return _finish(rho + drho, check)
