import numpy as np
import pytest

from src.errors import ProjectionLeakError, SubspaceLeakError
from src.quantum import collective_operator, computational_state, two_body_zz_sum, weighted_z_sum
from src.sme import sme_step
from src.paqs import rotate
from src.symmetry import (
    build_dicke_basis,
    build_ghz_sym_basis,
    dicke_collective_generators,
    effective_qubit_map,
    effective_qubit_operators,
    embed_state,
    lift_state,
    project_operator,
    symmetric_operators,
    traceless,
)
from src.types import FeedbackGenerator

W3 = (computational_state("001") + computational_state("010") + computational_state("100")) / np.sqrt(3)
GHZ3 = (computational_state("000") + computational_state("111")) / np.sqrt(2)
PLUS3 = np.full(8, 1 / np.sqrt(8), dtype=complex)


def test_dicke_basis_vectors():
    """Dicke vectors in ascending excitation."""
    basis = build_dicke_basis(3)
    assert basis.dim == 4
    assert np.allclose(basis.vectors[:, 1], W3)
    assert np.allclose(build_dicke_basis(1).vectors, np.eye(2))
    d42 = build_dicke_basis(4).vectors[:, 2]
    assert np.count_nonzero(np.abs(d42) > 1e-12) == 6
    assert np.allclose(d42[np.abs(d42) > 1e-12], 1 / np.sqrt(6))


def test_ghz_sym_basis():
    """GHZ first; dimensions follow N parity."""
    basis = build_ghz_sym_basis(3)
    assert np.allclose(basis.vectors[:, 0], GHZ3)
    six = basis.vectors[:, 1]
    assert np.allclose(six[[1, 2, 3, 4, 5, 6]], 1 / np.sqrt(6))
    assert build_ghz_sym_basis(4).dim == 3
    assert build_ghz_sym_basis(5).dim == 3


def test_project_operator_examples():
    """Projected observables and generators for N = 3."""
    ghz = build_ghz_sym_basis(3)
    assert np.allclose(project_operator(two_body_zz_sum(3), ghz), np.diag([3, -1]))
    s3 = np.sqrt(3)
    assert np.allclose(project_operator(collective_operator(3, "x"), ghz), [[0, s3], [s3, 2]])
    dicke = build_dicke_basis(3)
    assert np.allclose(project_operator(collective_operator(3, "z"), dicke), np.diag([3, 1, -1, -3]))


def test_project_operator_rejects_symmetry_breaking():
    """2 Z1 - Z2 - Z3 leaks out of the permutation-symmetric span."""
    with pytest.raises(ProjectionLeakError):
        project_operator(weighted_z_sum((2, -1, -1)), build_ghz_sym_basis(3))


def test_ladder_generators_match_projection():
    """Ladder-built collective operators agree with brute-force projection."""
    for n in (2, 3, 5):
        basis = build_dicke_basis(n)
        jz, jy, jx = dicke_collective_generators(n)
        assert np.allclose(jz, np.diag(n - 2 * np.arange(n + 1)))
        assert np.allclose(jy, project_operator(collective_operator(n, "y"), basis), atol=1e-12)
        assert np.allclose(jx, project_operator(collective_operator(n, "x"), basis), atol=1e-12)


def test_symmetric_operators_ghz_match_projection():
    """ghz-sym operators from the isometry equal full-space projections."""
    for n in (3, 4):
        basis = build_ghz_sym_basis(n)
        zz, _, sx = symmetric_operators(basis)
        assert np.allclose(zz, project_operator(two_body_zz_sum(n), basis), atol=1e-12)
        assert np.allclose(sx, project_operator(collective_operator(n, "x"), basis), atol=1e-12)


def test_lift_and_embed():
    """Coordinates of GHZ, |+++> and W."""
    ghz = build_ghz_sym_basis(3)
    assert np.allclose(lift_state(GHZ3, ghz), [1, 0])
    assert np.allclose(lift_state(PLUS3, ghz), [0.5, np.sqrt(3) / 2])
    dicke = build_dicke_basis(3)
    assert np.allclose(embed_state(lift_state(W3, dicke), dicke), W3, atol=1e-12)


def test_lift_rejects_nonsymmetric_state():
    """|001> alone is not bit-flip symmetric."""
    with pytest.raises(SubspaceLeakError):
        lift_state(computational_state("001"), build_ghz_sym_basis(3))


def test_effective_qubit_map_examples():
    """Bloch vectors of the ghz-sym(3) encoding."""
    start = effective_qubit_map(np.array([0.5, np.sqrt(3) / 2], dtype=complex), k=1.0)
    assert np.allclose(start.bloch, [np.sqrt(3) / 2, 0, -0.5])
    assert np.isclose(start.effective_strength, 4.0)
    assert np.allclose(effective_qubit_map(np.array([1, 0], dtype=complex)).bloch, [0, 0, 1])
    assert np.isclose(effective_qubit_map(np.eye(2) / 2).fidelity, 0.5)


def test_effective_qubit_dynamics_match_ghz_sym():
    """Measurement at 4k and rotation by 2 theta reproduce the ghz-sym(3) step."""
    basis = build_ghz_sym_basis(3)
    zz, _, sx = symmetric_operators(basis)
    gen = FeedbackGenerator(traceless(0.5 * sx), basis.tag)
    obs_eff, gen_eff = effective_qubit_operators(k=1.0)
    rho = np.outer([0.5, np.sqrt(3) / 2], [0.5, np.sqrt(3) / 2]).astype(complex)
    rho = 0.9 * rho + 0.05 * np.eye(2)
    rng = np.random.default_rng(3)
    dt = 1e-4
    for _ in range(200):
        dW = rng.normal() * np.sqrt(dt)
        theta = rng.normal() * 0.05
        a = rotate(gen, theta, sme_step(rho, zz, 1.0, dt, dW, check=False))
        b = rotate(gen_eff, 2 * theta, sme_step(rho, obs_eff.X, obs_eff.k, dt, dW, check=False))
        assert np.max(np.abs(a - b)) < 1e-10
        rho = a
