"""Steady subsonic potential flow through an infinite 3D nozzle with an obstacle.

The solver minimizes a truncated convex energy on a finite piece of the
nozzle and the diagnostics measure flux conservation and far-field decay of
the computed velocity.
"""
from .gas import DensityLaw, GasModel, TruncatedDensity, build_truncation
from .geometry import NozzleGeometry, NozzleProfile, ObstacleProfile
from .mesh import Mesh, build_mesh
from .assembly import PotentialField
from .solver import SolverConfig, SolveReport, continuation_sweep, solve

__version__ = "0.1.0"

__all__ = [
    "DensityLaw",
    "GasModel",
    "TruncatedDensity",
    "build_truncation",
    "NozzleGeometry",
    "NozzleProfile",
    "ObstacleProfile",
    "Mesh",
    "build_mesh",
    "PotentialField",
    "SolverConfig",
    "SolveReport",
    "solve",
    "continuation_sweep",
]
