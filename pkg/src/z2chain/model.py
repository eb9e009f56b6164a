"""Circuit parameters, lattice bookkeeping, measurement records, and seeding.

Everything here is immutable after construction and safe to share across
worker processes.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import OutOfRange, LengthMismatch

BOUNDARIES = ("open", "periodic")
INITIAL_STATES = (
    "ghz_plus",
    "all_up",
    "maximally_mixed",
    "ghz_with_reference",
    "all_up_with_reference",
    # the Kramers-Wannier image of ghz_plus; the disorder-susceptibility
    # side of the self-duality experiment starts here
    "plus_product",
)

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the splitmix64 bijection (pure 64-bit integer arithmetic)."""
    x = (x + _GOLDEN64) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_trajectory_seed(master_seed: int, trajectory_index: int) -> int:
    """Derive a per-trajectory RNG seed from (master_seed, index).

    Counter-based and platform-independent: the same pair always yields the
    same 64-bit value, and distinct indices never collide for a fixed master
    seed (the inner map is injective in the index, the outer map bijective).
    """
    if trajectory_index < 0:
        raise OutOfRange("trajectory_index", "trajectory_index must be >= 0")
    inner = (splitmix64(master_seed & _MASK64) ^ (_GOLDEN64 * (trajectory_index + 1))) & _MASK64
    return splitmix64(inner)


@dataclass(frozen=True)
class SimParams:
    """Full specification of one circuit run.

    ``T`` defaults to 4*L layers when not given; the steady-state plateaus
    are insensitive to further doubling at the sizes used here.
    """

    lambda_x: float
    lambda_zz: float
    q_x: float = 0.0
    q_zz: float = 0.0
    theta_x: float = 0.0
    theta_zz: float = 0.0
    L: int = 8
    T: Optional[int] = None
    boundary: str = "open"
    initial_state: str = "ghz_plus"
    master_seed: int = 0

    def __post_init__(self):
        if self.T is None:
            object.__setattr__(self, "T", 4 * self.L)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def bonds(self):
        """ZZ bond list as (i, i+1) pairs; wraps once for periodic chains."""
        if self.boundary == "periodic":
            return tuple((i, (i + 1) % self.L) for i in range(self.L))
        return tuple((i, i + 1) for i in range(self.L - 1))

    @property
    def has_reference(self) -> bool:
        return self.initial_state.endswith("with_reference")

    @property
    def n_sites(self) -> int:
        """Number of chain sites including the reference qubit, if any."""
        return self.L + (1 if self.has_reference else 0)

    @property
    def is_real(self) -> bool:
        """True when every circuit kernel is real (no unitary rotations)."""
        return self.theta_x == 0.0 and self.theta_zz == 0.0


def validate_params(p: SimParams) -> SimParams:
    """Return ``p`` unchanged iff every range invariant holds.

    Raises OutOfRange naming the offending field otherwise.
    """
    for name in ("lambda_x", "lambda_zz"):
        v = getattr(p, name)
        if not (0.0 <= v <= 1.0):
            raise OutOfRange(name, f"{name}={v} outside [0, 1]")
    for name in ("q_x", "q_zz"):
        v = getattr(p, name)
        if not (0.0 <= v <= 0.5):
            raise OutOfRange(name, f"{name}={v} outside [0, 1/2]")
    if p.L < 1:
        raise OutOfRange("L", "L must be a positive integer")
    if p.T < 1:
        raise OutOfRange("T", "T must be a positive integer")
    if p.boundary not in BOUNDARIES:
        raise OutOfRange("boundary", f"boundary must be one of {BOUNDARIES}")
    if p.initial_state not in INITIAL_STATES:
        raise OutOfRange("initial_state", f"initial_state must be one of {INITIAL_STATES}")
    # A 2-site ring would carry the same bond twice.
    if p.boundary == "periodic" and p.L < 3:
        raise OutOfRange("L", "periodic boundary with ZZ terms requires L >= 3")
    return p


@dataclass(frozen=True)
class PhasePoint:
    """Point in the (lambda, q) phase diagram of the delta-parametrized cut.

    Expands affinely: lambda_x = delta*lam, lambda_zz = delta*(1 - lam),
    q_x = q_zz = q.
    """

    lam: float
    q: float
    delta: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise OutOfRange("lambda", f"lambda={self.lam} outside [0, 1]")
        if not (0.0 <= self.q <= 0.5):
            raise OutOfRange("q", f"q={self.q} outside [0, 1/2]")
        if not (0.0 < self.delta < 1.0):
            raise OutOfRange("delta", f"delta={self.delta} outside (0, 1)")

    def to_sim_params(self, L: int, T: Optional[int] = None, **kwargs) -> SimParams:
        return SimParams(
            lambda_x=self.delta * self.lam,
            lambda_zz=self.delta * (1.0 - self.lam),
            q_x=self.q,
            q_zz=self.q,
            L=L,
            T=T,
            **kwargs,
        )


@dataclass(frozen=True)
class MeasurementRecord:
    """Array of +-1 outcomes indexed by (layer, site) and (layer, bond).

    This is the quenched disorder of the space-time partition function:
    m_x[t, i] sits on the temporal bond (t-1, i)-(t, i) and m_zz[t, b] on the
    spatial bond b of row t.
    """

    m_x: np.ndarray
    m_zz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m_x", np.asarray(self.m_x, dtype=np.int8))
        object.__setattr__(self, "m_zz", np.asarray(self.m_zz, dtype=np.int8))
        for arr, name in ((self.m_x, "m_x"), (self.m_zz, "m_zz")):
            if arr.ndim != 2:
                raise LengthMismatch(f"{name} must be 2d (layers x sites)")
            if arr.size and not np.all(np.abs(arr) == 1):
                raise OutOfRange(name, f"{name} entries must be +-1")
        if self.m_x.shape[0] != self.m_zz.shape[0]:
            raise LengthMismatch("m_x and m_zz must have the same number of layers")

    @property
    def T(self) -> int:
        return self.m_x.shape[0]

    @property
    def L(self) -> int:
        return self.m_x.shape[1]

    def key(self):
        """Hashable identity of the record (for exhaustive-mode tables)."""
        return (self.m_x.tobytes(), self.m_zz.tobytes())

    def swapped(self) -> "MeasurementRecord":
        """Record with the X and ZZ outcome arrays interchanged (duality)."""
        return MeasurementRecord(m_x=self.m_zz.copy(), m_zz=self.m_x.copy())


@dataclass(frozen=True)
class SpinConfig:
    """One boundary slice of one spin species, entries +-1."""

    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.int8))
        if self.s.size and not np.all(np.abs(self.s) == 1):
            raise OutOfRange("s", "spin entries must be +-1")

    def __len__(self):
        return len(self.s)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Outcome record plus whatever was evaluated along one trajectory."""

    record: MeasurementRecord
    log_born_weight: float
    observables: object = None
    final_zz_outcomes: Optional[np.ndarray] = None
    seed: int = 0
