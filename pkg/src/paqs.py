"""Locally optimal feedback angles.

Fidelity after a feedback rotation, with U_F(theta) = exp(-i theta H_F):
  F(theta) = <psi_T| U_F rho U_F^dagger |psi_T>
  F'(0)    = -i <psi_T|[H_F, rho]|psi_T>             (g)
  F''(0)   = -<psi_T|[H_F, [H_F, rho]]|psi_T>         (-D)

Closed-form coefficients on a state at a local maximum (g = 0), Y = sqrt(2k) X:
  A1 = -i <[H_F, Y rho + rho Y^dagger]> / D
  A2 = -<[H_F, i D[Y]rho + A1 [H_F, Y rho + rho Y^dagger] + i A1^2 D[H_F]rho]> / D

Angle conventions:
  dV form:  theta = sqrt(8k) A1 dV + (A2 - 2 A1 <Y>) dt
  dW form:  theta = A1 dW + A2 dt
The controlled SME and its averaged (ASLO) form are generated by the
measurement-record feedback sqrt(8k) A1 dV + A2 dt. In dW form that is
A1 dW + (A2 + 2 A1 <Y>) dt, which is the angle decide_feedback applies. It
records the shifted drift coefficient in FeedbackDecision.a2.

Escalation (never silent):
  [H_F, rho] = 0                 -> skip-commuting, theta = 0
  D ~ 0 or D < 0                 -> global_angle_search
  second derivative >= 0 at theta -> global_angle_search
  offset g/D above RECENTER_LIMIT -> global_angle_search
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from src.errors import CommutingGeneratorError, NotExtremalError, VanishingCurvatureError
from src.quantum import commutator, dissipator
from src.types import FeedbackDecision, FeedbackGenerator

logger = logging.getLogger(__name__)

TOL_EXT = 1e-6             # |g| above which the input is not extremal
COMMUTE_TOL = 1e-12        # max |[H_F, rho]| treated as commuting
CURVATURE_TOL = 1e-12      # |D| treated as vanishing
IMAG_TOL = 1e-10           # imaginary residue allowed on A1, A2
GRID_POINTS = 256          # global search resolution per period
REFINE_XTOL = 1e-10        # golden-section resolution in theta
RECENTER_LIMIT = 0.1       # rad; larger offsets go to the global search
FIDELITY_SLACK = 1e-12     # tie window when comparing fidelities
PERIOD_PROBE_TOL = 1e-10
GHZ_CANDIDATES = (0.0, np.pi / 2)


def _sandwich(op: np.ndarray, psi: np.ndarray) -> complex:
    return complex(psi.conj() @ op @ psi)


def first_derivative(rho: np.ndarray, H_F: np.ndarray, target: np.ndarray) -> float:
    """g = dF/dtheta at theta = 0."""
    return float(np.real(-1j * _sandwich(commutator(H_F, rho), target)))


def curvature(rho: np.ndarray, H_F: np.ndarray, target: np.ndarray) -> float:
    """D = <psi_T|[H_F, [H_F, rho]]|psi_T>; positive at a fidelity maximum."""
    return float(np.real(_sandwich(commutator(H_F, commutator(H_F, rho)), target)))


def compute_coefficients(
    rho: np.ndarray,
    H_F: np.ndarray,
    X: np.ndarray,
    k: float,
    target: np.ndarray,
    tol_ext: Optional[float] = TOL_EXT,
) -> Tuple[float, float]:
    """Closed-form (A1, A2) for a state at a local fidelity maximum.

    Parameters:
      rho: Density matrix at time t (before the measurement step)
      H_F: Feedback generator
      X: Measured observable; Y = sqrt(2k) X
      k: Measurement strength (1/us)
      target: Target state vector
      tol_ext: Extremality tolerance on g; None skips the check

    Returns:
      (A1, A2), real

    Raises:
      CommutingGeneratorError: [H_F, rho] = 0 to COMMUTE_TOL
      VanishingCurvatureError: |D| < CURVATURE_TOL
      NotExtremalError: |g| > tol_ext
    """
    H = np.asarray(H_F, dtype=complex)
    if np.max(np.abs(commutator(H, rho))) < COMMUTE_TOL:
        raise CommutingGeneratorError("feedback generator commutes with the state")
    D = curvature(rho, H, target)
    if abs(D) < CURVATURE_TOL:
        raise VanishingCurvatureError(f"curvature {D:.3e} vanishes")
    if tol_ext is not None:
        g = first_derivative(rho, H, target)
        if abs(g) > tol_ext:
            raise NotExtremalError(f"first derivative {g:.3e} exceeds {tol_ext:.0e}")

    Y = np.sqrt(2.0 * k) * np.asarray(X, dtype=complex)
    sym = Y @ rho + rho @ Y.conj().T
    a1 = -1j * _sandwich(commutator(H, sym), target) / D
    assert abs(a1.imag) < IMAG_TOL * max(1.0, abs(a1.real)), f"A1 imaginary residue {a1.imag:.3e}"
    a1 = a1.real

    inner = 1j * dissipator(Y, rho) + a1 * commutator(H, sym) + 1j * a1 ** 2 * dissipator(H, rho)
    a2 = -_sandwich(commutator(H, inner), target) / D
    assert abs(a2.imag) < IMAG_TOL * max(1.0, abs(a2.real)), f"A2 imaginary residue {a2.imag:.3e}"
    return float(a1), float(a2.real)


def optimal_angle(a1: float, a2: float, dW: float, dt: float) -> float:
    return a1 * dW + a2 * dt


def optimal_angle_from_dV(
    a1: float,
    a2: float,
    dV: float,
    dt: float,
    expectation_Y: float,
    k: float,
) -> float:
    """Same angle from the measurement record; <Y> is taken before the measurement."""
    return np.sqrt(8.0 * k) * a1 * dV + (a2 - 2.0 * a1 * expectation_Y) * dt


def second_derivative_test(rho_c: np.ndarray, H_F: np.ndarray, target: np.ndarray) -> float:
    """-<psi_T|[H_F, [H_F, rho_c]]|psi_T>; a maximum needs a negative value."""
    return -curvature(rho_c, np.asarray(H_F, dtype=complex), target)


def rotate(generator: FeedbackGenerator, theta: float, rho: np.ndarray) -> np.ndarray:
    U = generator.unitary(theta)
    if rho.ndim == 1:
        return U @ rho
    return U @ rho @ U.conj().T


def fidelity_curve(
    rho: np.ndarray,
    generator: FeedbackGenerator,
    target: np.ndarray,
    thetas: np.ndarray,
) -> np.ndarray:
    """F(theta) on many angles at once, in the eigenbasis of H_F."""
    V, lam = generator.eigenvectors, generator.eigenvalues
    phi = V.conj().T @ target
    rho_e = V.conj().T @ rho @ V
    weights = phi.conj()[:, None] * rho_e * phi[None, :]
    gaps = lam[:, None] - lam[None, :]
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phases = np.exp(-1j * thetas[:, None, None] * gaps[None, :, :])
    return np.real(np.sum(phases * weights[None, :, :], axis=(1, 2)))


def rotation_period(rho: np.ndarray, generator: FeedbackGenerator) -> float:
    """pi when U_F(pi) acts as identity on rho, else 2 pi."""
    rotated = rotate(generator, np.pi, rho)
    if np.max(np.abs(rotated - rho)) < PERIOD_PROBE_TOL:
        return np.pi
    return 2.0 * np.pi


def wrap_angle(theta: float, period: float) -> float:
    # representative in (-P/2, P/2]
    wrapped = (theta + period / 2) % period - period / 2
    return period / 2 if np.isclose(wrapped, -period / 2) else float(wrapped)


def argmax_smallest_angle(thetas: np.ndarray, values: np.ndarray, period: float) -> int:
    best = np.max(values)
    ties = np.flatnonzero(values >= best - FIDELITY_SLACK)
    magnitudes = [abs(wrap_angle(thetas[i], period)) for i in ties]
    return int(ties[int(np.argmin(magnitudes))])


def golden_refine(
    objective,
    lo: float,
    mid: float,
    hi: float,
    xtol: float = REFINE_XTOL,
) -> float:
    """Maximize `objective` on the bracket lo < mid < hi.

    Bounded Brent search (golden-section with parabolic steps) on [lo, hi].
    Returns `mid` when the bracket is not strict or the search ends lower.
    """
    f_lo, f_mid, f_hi = objective(lo), objective(mid), objective(hi)
    if not (f_mid > f_lo and f_mid > f_hi):
        return mid
    res = minimize_scalar(
        lambda s: -objective(s),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xtol},
    )
    best = float(res.x)
    return best if objective(best) >= f_mid else mid


def global_angle_search(
    rho: np.ndarray,
    generator: FeedbackGenerator,
    target: np.ndarray,
    grid: int = GRID_POINTS,
    candidates: Optional[Sequence[float]] = None,
) -> float:
    """Argmax of F(theta) over one period of U_F.

    With `candidates`, only those angles are compared. Otherwise a grid scan
    is refined by golden-section search. Ties break to the smallest |theta|.
    Angles are returned in (-P/2, P/2].
    """
    period = rotation_period(rho, generator)
    if candidates is not None:
        thetas = np.asarray(candidates, dtype=float)
        values = fidelity_curve(rho, generator, target, thetas)
        return float(thetas[argmax_smallest_angle(thetas, values, period)])

    thetas = np.linspace(0.0, period, grid, endpoint=False)
    values = fidelity_curve(rho, generator, target, thetas)
    i = argmax_smallest_angle(thetas, values, period)
    step = period / grid
    centre = wrap_angle(thetas[i], period)

    def objective(theta: float) -> float:
        return float(fidelity_curve(rho, generator, target, np.array([theta]))[0])

    return wrap_angle(golden_refine(objective, centre - step, centre, centre + step), period)


def _ghz_candidate(
    rho: np.ndarray,
    generator: FeedbackGenerator,
    target: np.ndarray,
    candidates: Sequence[float],
    grid: int,
) -> float:
    thetas = np.asarray(candidates, dtype=float)
    values = fidelity_curve(rho, generator, target, thetas)
    order = np.argsort(-values, kind="mergesort")
    period = rotation_period(rho, generator)
    chosen = thetas[argmax_smallest_angle(thetas, values, period)]
    if second_derivative_test(rotate(generator, chosen, rho), generator.H, target) < 0:
        return float(chosen)
    for i in order:
        if second_derivative_test(rotate(generator, thetas[i], rho), generator.H, target) < 0:
            return float(thetas[i])
    return global_angle_search(rho, generator, target, grid)


def _large_angle(
    rho: np.ndarray,
    generator: FeedbackGenerator,
    target: np.ndarray,
    theta: float,
    a1: float = 0.0,
    a2: float = 0.0,
) -> FeedbackDecision:
    sd = second_derivative_test(rotate(generator, theta, rho), generator.H, target)
    return FeedbackDecision(theta=theta, a1=a1, a2=a2, mode="large-angle", second_derivative=sd)


def _fid(rho: np.ndarray, target: np.ndarray) -> float:
    return float(np.real(target.conj() @ rho @ target))


def decide_feedback(
    rho_post: np.ndarray,
    generator: FeedbackGenerator,
    X: np.ndarray,
    k: float,
    dt: float,
    dW: float,
    target: np.ndarray,
    rho_pre: Optional[np.ndarray] = None,
    candidates: Optional[Sequence[float]] = None,
    grid: int = GRID_POINTS,
    global_check: bool = False,
    tol_ext: float = TOL_EXT,
) -> FeedbackDecision:
    """Feedback angle for the post-measurement state.

    Coefficients come from `rho_pre` (the state before the measurement,
    defaults to rho_post). An input offset g/D above tol_ext is folded in as
    a Newton re-centring term. The result never has lower fidelity than
    theta = 0 by more than FIDELITY_SLACK.
    """
    H = generator.H
    if np.max(np.abs(commutator(H, rho_post))) < COMMUTE_TOL:
        return FeedbackDecision(theta=0.0, a1=0.0, a2=0.0, mode="skip-commuting", second_derivative=0.0)

    if candidates is not None:
        theta = _ghz_candidate(rho_post, generator, target, candidates, grid)
        return _large_angle(rho_post, generator, target, theta)

    base = rho_post if rho_pre is None else rho_pre
    try:
        a1, a2 = compute_coefficients(base, H, X, k, target, tol_ext=None)
    except (CommutingGeneratorError, VanishingCurvatureError) as exc:
        logger.debug("escalating to global search: %s", exc)
        return _large_angle(rho_post, generator, target,
                            global_angle_search(rho_post, generator, target, grid))

    D = curvature(base, H, target)
    g = first_derivative(base, H, target)
    recenter = g / D if abs(g) > tol_ext else 0.0
    if D < 0 or abs(recenter) > RECENTER_LIMIT:
        return _large_angle(rho_post, generator, target,
                            global_angle_search(rho_post, generator, target, grid), a1, a2)

    expect_Y = float(np.real(np.trace(np.sqrt(2.0 * k) * X @ base)))
    a2_dw = a2 + 2.0 * a1 * expect_Y
    theta = recenter + optimal_angle(a1, a2_dw, dW, dt)
    rho_c = rotate(generator, theta, rho_post)
    sd = second_derivative_test(rho_c, H, target)
    if sd >= 0:
        return _large_angle(rho_post, generator, target,
                            global_angle_search(rho_post, generator, target, grid), a1, a2_dw)

    f_zero = _fid(rho_post, target)
    if _fid(rho_c, target) < f_zero - FIDELITY_SLACK:
        # closed form overshot; keep the better end of [0, theta] and its interior
        res = minimize_scalar(
            lambda t: -_fid(rotate(generator, t, rho_post), target),
            bounds=(min(0.0, theta), max(0.0, theta)),
            method="bounded",
            options={"xatol": REFINE_XTOL},
        )
        polished = float(res.x) if -res.fun >= f_zero else 0.0
        recenter += polished - theta
        theta = polished
        rho_c = rotate(generator, theta, rho_post)
        sd = second_derivative_test(rho_c, H, target)

    if global_check:
        best = global_angle_search(rho_post, generator, target, grid)
        if _fid(rotate(generator, best, rho_post), target) > _fid(rho_c, target) + FIDELITY_SLACK:
            return _large_angle(rho_post, generator, target, best, a1, a2_dw)

    return FeedbackDecision(theta=theta, a1=a1, a2=a2_dw, mode="infinitesimal",
                            second_derivative=sd, recenter=recenter)


def dw_threshold(
    rho: np.ndarray,
    H_F: np.ndarray,
    X: np.ndarray,
    k: float,
    target: np.ndarray,
    a1: float,
    a2: float,
    dt: float,
) -> float:
    """|dW| above which the closed-form angle is predicted to land on a minimum.

    Takes compute_coefficients output (a2 without the <Y> shift). Diagnostic only;
    the sign of second_derivative_test decides the control path.
    """
    H = np.asarray(H_F, dtype=complex)
    Y = np.sqrt(2.0 * k) * np.asarray(X, dtype=complex)
    sym = Y @ rho + rho @ Y.conj().T

    def cc(op: np.ndarray) -> np.ndarray:
        return commutator(H, commutator(H, op))

    D = curvature(rho, H, target)
    slope = _sandwich(cc(sym) - 1j * a1 * commutator(H, cc(rho)), target)
    drift = _sandwich(
        cc(dissipator(Y, rho)) + a1 ** 2 * cc(dissipator(H, rho))
        - 1j * commutator(H, cc(a1 * sym + a2 * rho)),
        target,
    )
    slope = abs(np.real(slope))
    if slope == 0.0:
        return float("inf")
    return float(abs(D + np.real(drift) * dt) / slope)
