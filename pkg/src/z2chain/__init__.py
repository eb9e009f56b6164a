"""Monitored Z2-symmetric open qubit chains.

Doubled-state simulators (exact and MPS), symmetry-breaking and
information-theoretic diagnostics, and the classical partition-function
machinery that cross-checks them.
"""

from .model import (
    MeasurementRecord,
    PhasePoint,
    SimParams,
    SpinConfig,
    TrajectoryRecord,
    derive_trajectory_seed,
    validate_params,
)

__all__ = [
    "MeasurementRecord",
    "PhasePoint",
    "SimParams",
    "SpinConfig",
    "TrajectoryRecord",
    "derive_trajectory_seed",
    "validate_params",
]

__version__ = "0.1.0"
