"""Type definitions and data classes.

INVARIANT DEFINITION (Critical - aligns code/tests/CSV):
  state.dim == state.basis.dim
  ObservableSpec.X, FeedbackGenerator.H Hermitian to HERMITIAN_TOL
  StepParams.k * StepParams.dt <= MAX_KDT

Basis tags (locked terms):
  - full(N):            2**N computational basis, qubit 1 is the leftmost factor
  - dicke(N):           N+1 Dicke states, ascending excitation
  - ghz-sym(N):         bit-flip symmetrized Dicke pairs, ascending m (m=0 is GHZ)
  - effective-qubit:    2-dim encoding of ghz-sym(3)

All value types are immutable after construction. Arrays held by them are
never written to in place.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import (
    DimensionMismatchError,
    NonHermitianError,
    ScheduleMismatchError,
    StepSizeError,
)

HERMITIAN_TOL = 1e-12   # max |A - A^dagger| element
MAX_KDT = 0.01          # dt << 1/k

BasisKind = Literal["full", "dicke", "ghz-sym", "effective-qubit"]
DecisionMode = Literal["infinitesimal", "large-angle", "skip-commuting"]
TargetKind = Literal["w", "dicke", "ghz"]
ObservableKind = Literal["symmetric", "onebody-nonsym"]
Method = Literal["tea", "aslo", "baseline", "tangle"]
Representation = Literal["auto", "full", "symmetric"]


def _check_hermitian(op: np.ndarray, name: str) -> None:
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {op.shape}")
    deviation = np.max(np.abs(op - op.conj().T)) if op.size else 0.0
    if deviation > HERMITIAN_TOL:
        raise NonHermitianError(f"{name} not Hermitian (deviation {deviation:.3e})")


@dataclass(frozen=True)
class BasisTag:
    kind: BasisKind
    n_qubits: int

    @property
    def dim(self) -> int:
        n = self.n_qubits
        if self.kind == "full":
            return 2 ** n
        if self.kind == "dicke":
            return n + 1
        if self.kind == "ghz-sym":
            return (n + 1) // 2 if n % 2 == 1 else n // 2 + 1
        return 2


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Density matrix (dim x dim) or pure state vector (dim,) with its basis tag."""
    data: np.ndarray
    basis: BasisTag

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", data)
        dim = self.basis.dim
        if data.shape not in ((dim,), (dim, dim)):
            raise DimensionMismatchError(
                f"state shape {data.shape} does not match {self.basis.kind}"
                f"({self.basis.n_qubits}) of dim {dim}"
            )

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    """Measured operator X and measurement strength k (1/us).

    The scaled operator Y = sqrt(2k) X is derived on demand.
    """
    X: np.ndarray
    k: float
    basis: BasisTag
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=complex)
        _check_hermitian(X, "X")
        if X.shape[0] != self.basis.dim:
            raise DimensionMismatchError(f"X has dim {X.shape[0]}, basis dim {self.basis.dim}")
        if not self.k > 0:
            raise StepSizeError(f"measurement strength must be positive, got {self.k}")
        evals, evecs = np.linalg.eigh(X)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "eigenvalues", evals)
        object.__setattr__(self, "eigenvectors", evecs)

    @property
    def Y(self) -> np.ndarray:
        return np.sqrt(2.0 * self.k) * self.X


@dataclass(frozen=True, eq=False)
class FeedbackGenerator:
    """Hermitian H_F with U_F(theta) = exp(-i theta H_F)."""
    H: np.ndarray
    basis: BasisTag
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        _check_hermitian(H, "H_F")
        if H.shape[0] != self.basis.dim:
            raise DimensionMismatchError(f"H_F has dim {H.shape[0]}, basis dim {self.basis.dim}")
        evals, evecs = np.linalg.eigh(H)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "eigenvalues", evals)
        object.__setattr__(self, "eigenvectors", evecs)

    def unitary(self, theta: float) -> np.ndarray:
        phases = np.exp(-1j * theta * self.eigenvalues)
        return (self.eigenvectors * phases) @ self.eigenvectors.conj().T


@dataclass(frozen=True)
class StepParams:
    dt: float   # us
    k: float    # 1/us

    def __post_init__(self):
        if not (self.dt > 0 and self.k > 0):
            raise StepSizeError(f"dt and k must be positive (dt={self.dt}, k={self.k})")
        if self.k * self.dt > MAX_KDT * (1 + 1e-12):
            raise StepSizeError(f"k·dt exceeds {MAX_KDT} (k={self.k}, dt={self.dt})")


@dataclass(frozen=True)
class FeedbackDecision:
    """One feedback choice.

    mode == 'infinitesimal'  -> theta == recenter + a1*dW + a2*dt (recenter is 0
                                when the input was extremal within TOL_EXT)
    mode == 'skip-commuting' -> theta == 0
    """
    theta: float
    a1: float
    a2: float
    mode: DecisionMode
    second_derivative: float
    recenter: float = 0.0


@dataclass(frozen=True, eq=False)
class SymmetricBasis:
    """Permutation (and optionally bit-flip) symmetric subspace.

    vectors: (2**N, dim) columns, only for N <= MATERIALIZE_LIMIT, else None.
    dicke_isometry: (N+1, dim) coordinates of each basis vector in the Dicke basis.
    """
    kind: Literal["dicke", "ghz-sym"]
    n_qubits: int
    vectors: Optional[np.ndarray]
    dicke_isometry: np.ndarray

    @property
    def tag(self) -> BasisTag:
        return BasisTag(self.kind, self.n_qubits)

    @property
    def dim(self) -> int:
        return self.tag.dim

    @property
    def materialized(self) -> bool:
        return self.vectors is not None


@dataclass(frozen=True, eq=False)
class EffectiveQubit:
    rotation_axis: np.ndarray
    effective_strength: float
    bloch: np.ndarray

    def __post_init__(self):
        assert abs(np.linalg.norm(self.rotation_axis) - 1.0) < 1e-12, "rotation axis not unit"
        assert np.linalg.norm(self.bloch) <= 1.0 + 1e-10, "Bloch vector outside the ball"

    @property
    def fidelity(self) -> float:
        """Overlap with the encoded |0> (the GHZ state)."""
        return float((1.0 + self.bloch[2]) / 2.0)


@dataclass(frozen=True)
class ProtocolConfig:
    """Validated run configuration. Times in us, rates in 1/us."""
    method: Method
    target: TargetKind
    n_qubits: int
    excitation: int = 1
    observable: ObservableKind = "symmetric"
    k: float = 1.0
    dt: float = 1e-3
    t_final: float = 3.0
    n_traj: int = 1000
    seed: int = 42
    representation: Representation = "auto"
    output_dir: str = "out"
    global_check: bool = False
    diagnostics: bool = False
    angle_grid: Optional[int] = None
    quadrature_order: int = 16
    snapshots: int = 20
    bins: int = 50

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def step_params(self) -> StepParams:
        return StepParams(dt=self.dt, k=self.k)


@dataclass(frozen=True, eq=False)
class FeedbackSchedule:
    """A1(t), A2(t) precomputed on the averaged state; replayable on trajectories.

    recenter holds the one-off rotation (rad) applied at a step on top of the
    A1, A2 angle; zero unless the averaged state left its local maximum.
    """
    times: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    fingerprint: str
    recenter: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.recenter is None:
            object.__setattr__(self, "recenter", np.zeros(len(self.times)))
        if not (len(self.times) == len(self.a1) == len(self.a2) == len(self.recenter)):
            raise ScheduleMismatchError("schedule columns have different lengths")
        if not all(np.all(np.isfinite(col)) for col in (self.a1, self.a2, self.recenter)):
            raise ScheduleMismatchError("schedule holds non-finite coefficients")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"time_us": self.times, "a1": self.a1, "a2": self.a2, "recenter": self.recenter}
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, fingerprint: str) -> "FeedbackSchedule":
        return cls(
            times=df["time_us"].to_numpy(dtype=float),
            a1=df["a1"].to_numpy(dtype=float),
            a2=df["a2"].to_numpy(dtype=float),
            fingerprint=fingerprint,
            recenter=df["recenter"].to_numpy(dtype=float) if "recenter" in df.columns else None,
        )


@dataclass(frozen=True, eq=False)
class Protocol:
    """A configured protocol: operators and states in one representation.

    initial is the pure starting vector after any pre-rotation.
    candidates, when set, restricts feedback to those angles (GHZ family).
    target_index is the target's position in a symmetric basis, else None.
    subspace is the symmetric span a full-space run should stay inside.
    """
    config: ProtocolConfig
    initial: np.ndarray
    observable: ObservableSpec
    generator: FeedbackGenerator
    target: np.ndarray
    candidates: Optional[Tuple[float, ...]] = None
    target_index: Optional[int] = None
    subspace: Optional[SymmetricBasis] = None
    pre_rotation: float = 0.0

    @property
    def basis(self) -> BasisTag:
        return self.observable.basis

    def initial_density(self) -> np.ndarray:
        return np.outer(self.initial, self.initial.conj())


@dataclass
class TrajectoryResult:
    """Per-step record of one trajectory; arrays have n_steps + 1 entries."""
    index: int
    fidelity: np.ndarray
    theta: np.ndarray
    large_angle_steps: int = 0
    aborted: bool = False
    abort_reason: str = ""
    tangle: Optional[np.ndarray] = None
    predicted_failures: int = 0
    observed_failures: int = 0
    subspace_leak: float = 0.0


@dataclass
class EnsembleStats:
    """Ensemble mean over trajectories; sem = sample std / sqrt(n_kept)."""
    times: np.ndarray
    mean_fidelity: np.ndarray
    sem: np.ndarray
    n_traj: int
    n_aborted: int = 0
    large_angle_fraction: float = 0.0
    mean_tangle: Optional[np.ndarray] = None
    tangle_sem: Optional[np.ndarray] = None
    histograms: Optional[pd.DataFrame] = None
    success_probability: Optional[float] = None
    final_fidelities: Optional[np.ndarray] = None
    diagnostics: Dict[str, int] = field(default_factory=dict)
    subspace_leak: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time_us": self.times,
            "mean_fidelity": self.mean_fidelity,
            "sem": self.sem,
        })

    def tangle_frame(self) -> pd.DataFrame:
        assert self.mean_tangle is not None, "no tangle series recorded"
        return pd.DataFrame({
            "time_us": self.times,
            "mean_tangle": self.mean_tangle,
            "sem": self.tangle_sem,
        })


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    config_hash: str
    version: str
    wall_time_s: float
    artifacts: Dict[str, str] = field(default_factory=dict)
    n_aborted: int = 0
    summary: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "artifacts": dict(sorted(self.artifacts.items())),
            "n_aborted": self.n_aborted,
            "summary": self.summary,
        }
