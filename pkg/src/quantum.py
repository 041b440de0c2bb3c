"""Dense linear algebra primitives for qubit registers.

Conventions:
  - |0> is the +1 eigenstate of Z; qubit 1 is the leftmost Kronecker factor
  - hbar = 1, U_F(theta) = exp(-i theta H_F)
  - global phases are never tracked; comparisons happen on density matrices

Superoperators (X need not be Hermitian):
  D[X]rho = X rho X^dagger - 1/2 {X^dagger X, rho}
  H[X]rho = X rho + rho X^dagger - Tr[(X + X^dagger) rho] rho

Both are traceless for every input. For a projector onto an eigenvector of a
Hermitian X both vanish (dark state).

Functions accept raw numpy arrays or QuantumState values. Basis tags are
compared only when both operands carry one.
"""

import logging
from functools import reduce
from typing import Sequence, Union

import numpy as np
from scipy import linalg

from src.errors import (
    DimensionMismatchError,
    NonUnitaryError,
    PositivityError,
    StateValidationError,
)
from src.types import HERMITIAN_TOL, QuantumState

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-10        # |Tr(rho) - 1| after normalization
POSITIVITY_TOL = 1e-10   # smallest admissible eigenvalue of a valid state
ABORT_TOL = 1e-8         # steppers abort a trajectory beyond this
UNITARY_TOL = 1e-10
CLIP_TOL = 1e-10         # fidelity clipping window at 0 and 1

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"x": PAULI_X, "y": PAULI_Y, "z": PAULI_Z}

StateLike = Union[QuantumState, np.ndarray]


def _as_density(state: StateLike) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.density()
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


def _as_vector(target: StateLike) -> np.ndarray:
    if isinstance(target, QuantumState):
        if not target.is_pure:
            raise StateValidationError("target must be a pure state")
        return target.data
    return np.asarray(target, dtype=complex)


def _check_same_basis(a: StateLike, b: StateLike) -> None:
    if isinstance(a, QuantumState) and isinstance(b, QuantumState) and a.basis != b.basis:
        raise DimensionMismatchError(f"basis mismatch: {a.basis} vs {b.basis}")


def _check_dims(X: np.ndarray, rho: np.ndarray) -> None:
    if X.shape[-1] != rho.shape[0] or X.shape[0] != rho.shape[0]:
        raise DimensionMismatchError(f"operator {X.shape} does not act on state {rho.shape}")


def kron_chain(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Tensor product in left-to-right qubit order.

    Args:
        factors: Square matrices, one per subsystem

    Returns:
        Kronecker product with dimension equal to the product of factor dims
    """
    if len(factors) == 0:
        raise DimensionMismatchError("kron_chain needs at least one factor")
    for f in factors:
        f = np.asarray(f)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise DimensionMismatchError(f"non-square factor of shape {f.shape}")
    return reduce(np.kron, [np.asarray(f, dtype=complex) for f in factors])


def single_qubit_operator(op: np.ndarray, site: int, n_qubits: int) -> np.ndarray:
    """`op` on qubit `site` (0-based) of an n-qubit register, identity elsewhere."""
    factors = [PAULI_I] * n_qubits
    factors[site] = op
    return kron_chain(factors)


def _ones_count(n_qubits: int) -> np.ndarray:
    # number of |1> factors in each computational basis string
    idx = np.arange(2 ** n_qubits)
    return np.array([bin(i).count("1") for i in idx])


def collective_operator(n_qubits: int, axis: str) -> np.ndarray:
    """Sum of sigma_axis over all qubits in the full 2**N basis."""
    assert n_qubits >= 1, "need at least one qubit"
    if axis not in PAULIS:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    if axis == "z":
        return np.diag((n_qubits - 2 * _ones_count(n_qubits)).astype(complex))
    return sum(single_qubit_operator(PAULIS[axis], i, n_qubits) for i in range(n_qubits))


def two_body_zz_sum(n_qubits: int) -> np.ndarray:
    """Sum over pairs i<j of Z_i Z_j; diagonal with entry ((N-2m)^2 - N)/2 for m ones."""
    assert n_qubits >= 2, "two-body sum needs N >= 2"
    m = _ones_count(n_qubits)
    return np.diag((((n_qubits - 2 * m) ** 2 - n_qubits) / 2).astype(complex))


def weighted_z_sum(weights: Sequence[float]) -> np.ndarray:
    """Sum_i w_i Z_i, e.g. weights (2, -1, -1) gives the one-body GHZ observable."""
    n = len(weights)
    diag = np.zeros(2 ** n)
    for site, w in enumerate(weights):
        bits = (np.arange(2 ** n) >> (n - 1 - site)) & 1
        diag += w * (1 - 2 * bits)
    return np.diag(diag.astype(complex))


def computational_state(bits: str) -> np.ndarray:
    """Basis vector for a bitstring such as '001' (qubit 1 leftmost)."""
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def density_matrix(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def dissipator(X: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[X]rho; traceless increment."""
    X = np.asarray(X, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    _check_dims(X, rho)
    Xd = X.conj().T
    XdX = Xd @ X
    return X @ rho @ Xd - 0.5 * (XdX @ rho + rho @ XdX)


def innovation(X: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """H[X]rho; traceless increment."""
    X = np.asarray(X, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    _check_dims(X, rho)
    Xrho = X @ rho
    rhoXd = rho @ X.conj().T
    mean = np.trace(Xrho) + np.trace(rhoXd)
    return Xrho + rhoXd - mean * rho


def expectation(X: np.ndarray, state: StateLike) -> float:
    """Tr(X rho) for Hermitian X; the imaginary residue is discarded."""
    X = np.asarray(X, dtype=complex)
    rho = _as_density(state)
    _check_dims(X, rho)
    value = np.trace(X @ rho)
    assert abs(value.imag) < 1e-10 * max(1.0, abs(value.real)), \
        f"expectation has imaginary part {value.imag:.3e}"
    return float(value.real)


def fidelity(state: StateLike, target: StateLike) -> float:
    """<psi_T| rho |psi_T>, clipped into [0, 1] within CLIP_TOL."""
    _check_same_basis(state, target)
    psi = _as_vector(target)
    rho = _as_density(state)
    if rho.shape[0] != psi.shape[0]:
        raise DimensionMismatchError(f"state dim {rho.shape[0]} vs target dim {psi.shape[0]}")
    value = float(np.real(psi.conj() @ rho @ psi))
    if value < -CLIP_TOL or value > 1.0 + CLIP_TOL:
        raise StateValidationError(f"fidelity {value:.3e} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def is_unitary(U: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) < tol)


def apply_unitary(U: np.ndarray, state: StateLike) -> StateLike:
    """U rho U^dagger (or U psi for pure input); returns the input's type."""
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise NonUnitaryError("apply_unitary needs a unitary to 1e-10")
    data = state.data if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
    if data.shape[0] != U.shape[0]:
        raise DimensionMismatchError(f"unitary dim {U.shape[0]} vs state dim {data.shape[0]}")
    out = U @ data if data.ndim == 1 else U @ data @ U.conj().T
    if isinstance(state, QuantumState):
        return QuantumState(out, state.basis)
    return out


def unitary_from_generator(H: np.ndarray, theta: float) -> np.ndarray:
    """exp(-i theta H). Eigendecomposition for Hermitian H, expm otherwise."""
    H = np.asarray(H, dtype=complex)
    if np.max(np.abs(H - H.conj().T)) <= HERMITIAN_TOL:
        evals, evecs = linalg.eigh(H)
        return (evecs * np.exp(-1j * theta * evals)) @ evecs.conj().T
    return linalg.expm(-1j * theta * H)


def purity(state: StateLike) -> float:
    rho = _as_density(state)
    return float(np.real(np.trace(rho @ rho)))


def normalize_density(rho: np.ndarray) -> np.ndarray:
    """Hermitize and divide by the trace."""
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.real(np.trace(rho))


def check_positivity(rho: np.ndarray, tol: float = ABORT_TOL) -> float:
    """Smallest eigenvalue of rho; raises PositivityError below -tol."""
    lowest = float(linalg.eigvalsh(rho)[0])
    if lowest < -tol:
        raise PositivityError(f"eigenvalue {lowest:.3e} below -{tol:.0e}")
    return lowest


def validate_density(state: StateLike) -> None:
    """Hermiticity, unit trace and positivity checks for a density matrix."""
    rho = _as_density(state)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateValidationError(f"density matrix must be square, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise StateValidationError("density matrix is not Hermitian")
    trace = np.real(np.trace(rho))
    if abs(trace - 1.0) > TRACE_TOL:
        raise StateValidationError(f"trace {trace:.12f} differs from 1")
    check_positivity(rho, POSITIVITY_TOL)
