"""Finite-element toolkit for nonautonomous and quasilinear parabolic systems."""

from .errors import ParasysError, SolverError, ValidationError
from .geometry import Domain, Mesh2D, build_mesh
from .tensors import CoefficientTensor, TensorFamily
from .elliptic import FESpace, assemble, garding_constant
from .parabolic import TimeGrid, Trajectory, step_solve, maxreg_norm

__version__ = "0.1.0"

__all__ = [
    "ParasysError", "SolverError", "ValidationError",
    "Domain", "Mesh2D", "build_mesh",
    "CoefficientTensor", "TensorFamily",
    "FESpace", "assemble", "garding_constant",
    "TimeGrid", "Trajectory", "step_solve", "maxreg_norm",
]
