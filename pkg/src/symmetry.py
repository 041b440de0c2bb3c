"""Permutation and bit-flip symmetric subspaces.

Basis ordering (fixed, CSV reproducibility depends on it):
  dicke(N):    |N,k>, k = 0..N ascending excitation; |N,0> = |0...0>
  ghz-sym(N):  phi_m = (|N,m> + |N,N-m>)/sqrt(2), m = 0..floor(N/2) ascending;
               for even N the last vector is |N,N/2> itself; phi_0 is GHZ

Collective generators use the sum-of-Paulis convention sum_i sigma^(i) = 2J with
j = N/2, built from ladder algebra so nothing of size 2**N is allocated:
  R = sum_i |0><1|_i   R|k> = sqrt(k (N-k+1)) |k-1>
  L = sum_i |1><0|_i   L|k> = sqrt((k+1)(N-k)) |k+1>
  sum X = R + L,  sum Y = -i R + i L,  sum Z = diag(N - 2k)

Full-space vectors exist only for N <= MATERIALIZE_LIMIT. ghz-sym operators for
larger N go through the Dicke isometry.

Effective qubit (N=3 GHZ): |0~> = GHZ, |1~> = phi_1.
  projected sum X   = I + sqrt(3) X~ - Z~      (rotation about n, angle 2 theta)
  projected X_G^S   = diag(3, -1) = I + 2 Z~   (Z~ measurement at strength 4k)
"""

import logging
from typing import Tuple

import numpy as np
from scipy.special import comb

from src.errors import DimensionMismatchError, ProjectionLeakError, SubspaceLeakError
from src.quantum import StateLike
from src.types import BasisTag, EffectiveQubit, FeedbackGenerator, ObservableSpec, QuantumState, SymmetricBasis

logger = logging.getLogger(__name__)

MATERIALIZE_LIMIT = 12   # largest N with full-space basis vectors
LEAK_TOL = 1e-10         # operator leakage out of the span
LIFT_TOL = 1e-8          # state weight outside the span
EFFECTIVE_AXIS = np.array([np.sqrt(3) / 2, 0.0, -0.5])
EFFECTIVE_STRENGTH_FACTOR = 4.0
EFFECTIVE_ANGLE_FACTOR = 2.0

SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _dicke_vectors(n_qubits: int) -> np.ndarray:
    ones = np.array([bin(i).count("1") for i in range(2 ** n_qubits)])
    vectors = np.zeros((2 ** n_qubits, n_qubits + 1), dtype=complex)
    for k in range(n_qubits + 1):
        vectors[ones == k, k] = 1.0 / np.sqrt(comb(n_qubits, k, exact=True))
    return vectors


def _ghz_isometry(n_qubits: int) -> np.ndarray:
    dim = BasisTag("ghz-sym", n_qubits).dim
    iso = np.zeros((n_qubits + 1, dim), dtype=complex)
    for m in range(dim):
        if 2 * m == n_qubits:
            iso[m, m] = 1.0
        else:
            iso[m, m] = 1.0 / np.sqrt(2)
            iso[n_qubits - m, m] = 1.0 / np.sqrt(2)
    return iso


def build_dicke_basis(n_qubits: int) -> SymmetricBasis:
    """Dicke basis |N,k>, k = 0..N.

    Parameters:
      n_qubits: N >= 1

    Returns:
      SymmetricBasis with full-space vectors when N <= MATERIALIZE_LIMIT
    """
    assert n_qubits >= 1, "need at least one qubit"
    vectors = _dicke_vectors(n_qubits) if n_qubits <= MATERIALIZE_LIMIT else None
    return SymmetricBasis(
        kind="dicke",
        n_qubits=n_qubits,
        vectors=vectors,
        dicke_isometry=np.eye(n_qubits + 1, dtype=complex),
    )


def build_ghz_sym_basis(n_qubits: int) -> SymmetricBasis:
    """Permutation and bit-flip symmetric basis; first vector is GHZ.

    Each vector is a non-degenerate eigenvector of the projected two-body
    observable, with eigenvalue ((N-2m)^2 - N)/2 (C(N,2) for GHZ).
    """
    assert n_qubits >= 2, "GHZ basis needs N >= 2"
    iso = _ghz_isometry(n_qubits)
    vectors = _dicke_vectors(n_qubits) @ iso if n_qubits <= MATERIALIZE_LIMIT else None
    return SymmetricBasis(kind="ghz-sym", n_qubits=n_qubits, vectors=vectors, dicke_isometry=iso)


def dicke_collective_generators(n_qubits: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(sum Z, sum Y, sum X) in the Dicke basis, each (N+1) x (N+1)."""
    assert n_qubits >= 1, "need at least one qubit"
    k = np.arange(n_qubits + 1)
    raise_elems = np.sqrt(k[1:] * (n_qubits - k[1:] + 1)).astype(complex)
    R = np.diag(raise_elems, 1)          # R[k-1, k]
    L = R.conj().T                       # L[k+1, k]
    jz = np.diag((n_qubits - 2 * k).astype(complex))
    jy = -1j * R + 1j * L
    jx = R + L
    return jz, jy, jx


def dicke_zz_sum(n_qubits: int) -> np.ndarray:
    """Sum over pairs of Z_i Z_j in the Dicke basis: ((sum Z)^2 - N)/2."""
    k = np.arange(n_qubits + 1)
    return np.diag((((n_qubits - 2 * k) ** 2 - n_qubits) / 2).astype(complex))


def project_from_dicke(op_dicke: np.ndarray, basis: SymmetricBasis) -> np.ndarray:
    """Restrict a Dicke-space operator onto `basis` through its isometry."""
    iso = basis.dicke_isometry
    _raise_if_leaks(op_dicke, iso)
    return iso.conj().T @ op_dicke @ iso


def _raise_if_leaks(op: np.ndarray, vectors: np.ndarray) -> None:
    image = op @ vectors
    leak = image - vectors @ (vectors.conj().T @ image)
    size = float(np.max(np.abs(leak))) if leak.size else 0.0
    if size > LEAK_TOL:
        raise ProjectionLeakError(
            f"operator maps the symmetric span outside itself (leak {size:.3e}); "
            "it does not commute with the subspace symmetry"
        )


def project_operator(op: np.ndarray, basis: SymmetricBasis) -> np.ndarray:
    """Matrix elements <b_i| op |b_j> of a full-space operator.

    Raises:
      ProjectionLeakError if op does not preserve the span (to 1e-10)
    """
    if not basis.materialized:
        raise DimensionMismatchError(
            f"{basis.kind}({basis.n_qubits}) has no full-space vectors; use project_from_dicke"
        )
    op = np.asarray(op, dtype=complex)
    if op.shape != (2 ** basis.n_qubits,) * 2:
        raise DimensionMismatchError(f"operator shape {op.shape} is not 2**{basis.n_qubits}")
    _raise_if_leaks(op, basis.vectors)
    return basis.vectors.conj().T @ op @ basis.vectors


def traceless(op: np.ndarray) -> np.ndarray:
    """Drop the identity component Tr(op)/dim * I."""
    dim = op.shape[0]
    return op - np.trace(op) / dim * np.eye(dim)


def embed_state(state: StateLike, basis: SymmetricBasis) -> StateLike:
    """Symmetric coordinates -> full computational basis."""
    if not basis.materialized:
        raise DimensionMismatchError(f"cannot embed into 2**{basis.n_qubits} dimensions")
    data = state.data if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
    V = basis.vectors
    out = V @ data if data.ndim == 1 else V @ data @ V.conj().T
    if isinstance(state, QuantumState):
        return QuantumState(out, BasisTag("full", basis.n_qubits))
    return out


def lift_state(state: StateLike, basis: SymmetricBasis) -> StateLike:
    """Full computational basis -> symmetric coordinates.

    Raises:
      SubspaceLeakError if more than LIFT_TOL lies outside the span
    """
    if not basis.materialized:
        raise DimensionMismatchError(f"cannot lift from 2**{basis.n_qubits} dimensions")
    data = state.data if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
    V = basis.vectors
    if data.ndim == 1:
        out = V.conj().T @ data
        leak = float(np.linalg.norm(data - V @ out))
    else:
        out = V.conj().T @ data @ V
        leak = float(np.max(np.abs(data - V @ out @ V.conj().T)))
    if leak >= LIFT_TOL:
        raise SubspaceLeakError(f"state has weight {leak:.3e} outside {basis.kind}({basis.n_qubits})")
    if isinstance(state, QuantumState):
        return QuantumState(out, basis.tag)
    return out


def out_of_subspace_population(rho_full: np.ndarray, basis: SymmetricBasis) -> float:
    """1 - Tr(P rho) with P the projector onto the symmetric span."""
    V = basis.vectors
    inside = np.real(np.trace(V.conj().T @ rho_full @ V))
    return float(np.real(np.trace(rho_full)) - inside)


def bloch_vector(rho2: np.ndarray) -> np.ndarray:
    """(x, y, z) with rho = (I + x X + y Y + z Z)/2."""
    rho2 = np.asarray(rho2, dtype=complex)
    return np.array([
        2.0 * np.real(rho2[0, 1]),
        -2.0 * np.imag(rho2[0, 1]),
        np.real(rho2[0, 0] - rho2[1, 1]),
    ])


def effective_qubit_map(state: StateLike, k: float = 1.0) -> EffectiveQubit:
    """Bloch picture of a ghz-sym(3) state: Z~ measured at 4k, axis n, angle 2 theta."""
    data = state.data if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
    if data.shape[0] != 2:
        raise DimensionMismatchError(f"effective qubit needs a 2-dim state, got {data.shape}")
    rho2 = np.outer(data, data.conj()) if data.ndim == 1 else data
    return EffectiveQubit(
        rotation_axis=EFFECTIVE_AXIS.copy(),
        effective_strength=EFFECTIVE_STRENGTH_FACTOR * k,
        bloch=bloch_vector(rho2),
    )


def effective_qubit_operators(k: float) -> Tuple[ObservableSpec, FeedbackGenerator]:
    """Measurement Z~ at strength 4k and generator (n . sigma)/2 for angle 2 theta."""
    tag = BasisTag("effective-qubit", 3)
    n_sigma = sum(EFFECTIVE_AXIS[i] * SIGMA[a] for i, a in enumerate("xyz"))
    observable = ObservableSpec(SIGMA["z"], EFFECTIVE_STRENGTH_FACTOR * k, tag)
    generator = FeedbackGenerator(0.5 * n_sigma, tag)
    return observable, generator


def symmetric_operators(basis: SymmetricBasis) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collective operators restricted to `basis` without touching 2**N space.

    Returns:
      (sum Z, sum Y, sum X) for dicke; (pairwise ZZ sum, 0, sum X) for ghz-sym
    """
    jz, jy, jx = dicke_collective_generators(basis.n_qubits)
    if basis.kind == "dicke":
        return jz, jy, jx
    zz = project_from_dicke(dicke_zz_sum(basis.n_qubits), basis)
    sx = project_from_dicke(jx, basis)
    # sum Y does not preserve the bit-flip symmetric span
    return zz, np.zeros_like(zz), sx
