"""Exception hierarchy.

Every failure that depends on user input or on the physics of a run raises a
subclass of PaqsError. Programming errors (broken internal invariants) stay as
plain assertions next to the code that checks them.

Trajectory-level failures (PositivityError, UnlikelyOutcomeError) are caught by
the ensemble runners and recorded as aborted trajectories instead of
propagating.
"""


class PaqsError(Exception):
    pass


class DimensionMismatchError(PaqsError, ValueError):
    """Operands have incompatible shapes or basis tags."""
    pass


class NonUnitaryError(PaqsError, ValueError):
    pass


class StateValidationError(PaqsError, ValueError):
    """Density matrix fails Hermiticity, trace or shape checks."""
    pass


class PositivityError(PaqsError):
    """A stepped state has an eigenvalue below the abort tolerance."""
    pass


class UnlikelyOutcomeError(PaqsError):
    """POVM outcome with likelihood below 1e-300."""
    pass


class ProjectionLeakError(PaqsError, ValueError):
    """Operator does not commute with the symmetry of the target subspace."""
    pass


class SubspaceLeakError(PaqsError, ValueError):
    """State has weight outside the symmetric span."""
    pass


class CommutingGeneratorError(PaqsError):
    """[H_F, rho] vanishes; feedback cannot change the fidelity."""
    pass


class VanishingCurvatureError(PaqsError):
    """Curvature denominator is zero while [H_F, rho] is not."""
    pass


class NotExtremalError(PaqsError):
    """Input state is not at a local fidelity extremum."""
    pass


class StepSizeError(PaqsError, ValueError):
    pass


class ConfigError(PaqsError, ValueError):
    """Invalid run configuration. `key` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ScheduleMismatchError(PaqsError, ValueError):
    pass


class NonHermitianError(PaqsError, ValueError):
    pass


class EnsembleAbortedError(PaqsError):
    """Every trajectory of an ensemble aborted; nothing to average."""
    pass
