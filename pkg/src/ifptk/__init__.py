"""Forward and inverse first-passage-time problems for killed Brownian motion."""

from .domain import Barrier, DensityField, DensityHistory, SpatialGrid, TimeMesh
from .errors import CompatibilityViolation, DomainError, NonConvergence, NumericalFailure, StabilityError
from .forward import ForwardConfig, solve_forward
from .inverse import InverseConfig, iterate
from .survival import SurvivalSpec, check_compatibility

__version__ = "0.1.0"

__all__ = [
    "Barrier",
    "DensityField",
    "DensityHistory",
    "SpatialGrid",
    "TimeMesh",
    "CompatibilityViolation",
    "DomainError",
    "NonConvergence",
    "NumericalFailure",
    "StabilityError",
    "ForwardConfig",
    "solve_forward",
    "InverseConfig",
    "iterate",
    "SurvivalSpec",
    "check_compatibility",
]
