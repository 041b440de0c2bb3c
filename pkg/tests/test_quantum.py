import numpy as np
import pytest

from src.errors import DimensionMismatchError, NonUnitaryError, PositivityError, StateValidationError
from src.quantum import (
    PAULI_I,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    apply_unitary,
    check_positivity,
    collective_operator,
    computational_state,
    density_matrix,
    dissipator,
    expectation,
    fidelity,
    innovation,
    kron_chain,
    purity,
    two_body_zz_sum,
    unitary_from_generator,
    validate_density,
    weighted_z_sum,
)
from src.types import BasisTag, QuantumState

W3 = (computational_state("001") + computational_state("010") + computational_state("100")) / np.sqrt(3)
PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
THETA_W = 2 * np.arcsin(1 / np.sqrt(3))


def random_hermitian(rng, dim):
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (A + A.conj().T)


def random_density(rng, dim):
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real


def test_kron_chain_examples():
    """Tensor order is left to right."""
    assert np.allclose(kron_chain([PAULI_I, PAULI_I]), np.eye(4))
    assert np.allclose(kron_chain([PAULI_Z, PAULI_I, PAULI_I]), np.diag([1, 1, 1, 1, -1, -1, -1, -1]))
    yy = np.zeros((4, 4))
    yy[0, 3], yy[1, 2], yy[2, 1], yy[3, 0] = -1, 1, 1, -1
    assert np.allclose(kron_chain([PAULI_Y, PAULI_Y]), yy)


def test_kron_chain_rejects_bad_factors():
    """Empty lists and non-square factors raise."""
    with pytest.raises(DimensionMismatchError):
        kron_chain([])
    with pytest.raises(DimensionMismatchError):
        kron_chain([np.ones((2, 3))])


def test_collective_operator():
    """Sum of Paulis on the full register."""
    assert np.allclose(collective_operator(3, "z"), np.diag([3, 1, 1, -1, 1, -1, -1, -3]))
    assert np.allclose(collective_operator(1, "x"), PAULI_X)
    assert np.allclose(collective_operator(3, "z") @ W3, W3)


def test_two_body_zz_sum():
    """Pairwise parity sums on computational strings."""
    zz3 = two_body_zz_sum(3)
    assert np.isclose(zz3[0, 0].real, 3.0)
    assert np.isclose(zz3[1, 1].real, -1.0)
    zz4 = two_body_zz_sum(4)
    assert np.isclose(zz4[int("0011", 2), int("0011", 2)].real, -2.0)


def test_weighted_z_sum_matches_sites():
    """(2, -1, -1) weights give 2 Z1 - Z2 - Z3."""
    expected = (2 * kron_chain([PAULI_Z, PAULI_I, PAULI_I])
                - kron_chain([PAULI_I, PAULI_Z, PAULI_I])
                - kron_chain([PAULI_I, PAULI_I, PAULI_Z]))
    assert np.allclose(weighted_z_sum((2, -1, -1)), expected)


def test_dissipator_examples():
    """Hand-computed dissipator values."""
    minus = np.array([1.0, -1.0]) / np.sqrt(2)
    out = dissipator(PAULI_Z, density_matrix(PLUS))
    assert np.allclose(out, density_matrix(minus) - density_matrix(PLUS))
    rho = np.array([[0.5, 0.3], [0.3, 0.5]], dtype=complex)
    assert np.allclose(dissipator(PAULI_Z, rho), [[0, -0.6], [-0.6, 0]])


def test_innovation_example():
    """H[Z] on |+> is Z."""
    assert np.allclose(innovation(PAULI_Z, density_matrix(PLUS)), PAULI_Z)


def test_superoperators_traceless_on_random_inputs():
    """D and H never change the trace."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        X = random_hermitian(rng, 4)
        rho = random_density(rng, 4)
        assert abs(np.trace(dissipator(X, rho))) < 1e-12
        assert abs(np.trace(innovation(X, rho))) < 1e-12


def test_eigenprojector_is_dark():
    """Eigenstates of X are fixed by both superoperators."""
    rng = np.random.default_rng(1)
    X = random_hermitian(rng, 5)
    _, vecs = np.linalg.eigh(X)
    rho = density_matrix(vecs[:, 2])
    assert np.linalg.norm(dissipator(X, rho)) < 1e-10
    assert np.linalg.norm(innovation(X, rho)) < 1e-10


def test_dimension_mismatch_raises():
    """Operators must act on the state's space."""
    with pytest.raises(DimensionMismatchError):
        dissipator(PAULI_Z, np.eye(4) / 4)


def test_fidelity_examples():
    """Overlap with the W state."""
    assert np.isclose(fidelity(density_matrix(W3), W3), 1.0)
    assert np.isclose(fidelity(computational_state("000"), W3), 0.0)
    U = unitary_from_generator(0.5 * collective_operator(3, "y"), THETA_W)
    rotated = U @ computational_state("000")
    assert np.isclose(fidelity(rotated, W3), 4 / 9)


def test_fidelity_checks_basis_tags():
    """Tagged states in different bases do not compare."""
    a = QuantumState(np.array([1, 0, 0, 0], dtype=complex), BasisTag("dicke", 3))
    b = QuantumState(np.array([1, 0, 0, 0], dtype=complex), BasisTag("full", 2))
    with pytest.raises(DimensionMismatchError):
        fidelity(a, b)


def test_expectation_examples():
    """Collective observables on W and |+++>."""
    assert np.isclose(expectation(collective_operator(3, "z"), W3), 1.0)
    assert np.isclose(expectation(PAULI_Z, PLUS), 0.0)
    plus3 = np.full(8, 1 / np.sqrt(8), dtype=complex)
    assert abs(expectation(two_body_zz_sum(3), plus3)) < 1e-12


def test_apply_unitary():
    """Identity, full 2 pi turn and the W pre-rotation."""
    rng = np.random.default_rng(2)
    rho = random_density(rng, 8)
    assert np.allclose(apply_unitary(np.eye(8), rho), rho)
    U = unitary_from_generator(0.5 * collective_operator(3, "y"), 2 * np.pi)
    assert np.allclose(apply_unitary(U, rho), rho, atol=1e-10)

    U0 = unitary_from_generator(0.5 * collective_operator(3, "y"), THETA_W)
    state = QuantumState(density_matrix(computational_state("000")), BasisTag("full", 3))
    out = apply_unitary(U0, state)
    assert isinstance(out, QuantumState)
    assert np.isclose(fidelity(out, W3), 4 / 9)
    assert np.allclose(np.linalg.eigvalsh(out.data), np.linalg.eigvalsh(state.data), atol=1e-10)


def test_apply_unitary_rejects_non_unitary():
    """A scaled identity is not unitary."""
    with pytest.raises(NonUnitaryError):
        apply_unitary(2 * np.eye(2), density_matrix(PLUS))


def test_validation_guards():
    """Trace, Hermiticity and positivity checks."""
    validate_density(density_matrix(PLUS))
    assert np.isclose(purity(density_matrix(PLUS)), 1.0)
    with pytest.raises(StateValidationError):
        validate_density(np.eye(2, dtype=complex))
    with pytest.raises(StateValidationError):
        validate_density(np.array([[0.5, 0.1], [0.2, 0.5]], dtype=complex))
    bad = np.diag([1.1, -0.1]).astype(complex)
    with pytest.raises(PositivityError):
        check_positivity(bad)
