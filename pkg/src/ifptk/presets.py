"""Named built-in inputs so runs need no external files."""

from __future__ import annotations

import math

import numpy as np

from .domain import Barrier, DensityField, SpatialGrid, TimeMesh
from .errors import DomainError
from .survival import SurvivalSpec

__all__ = ["BARRIERS", "barrier", "gaussian_u0", "exponential_survival"]


def _constant(mesh: TimeMesh, value: float = 0.0) -> Barrier:
    return Barrier.constant(mesh, value)


def _linear(mesh: TimeMesh, value: float = 0.0, slope: float = 0.0) -> Barrier:
    return Barrier.from_function(mesh, lambda t: value + slope * t)


def _sinusoidal(mesh: TimeMesh, value: float = 0.0, amplitude: float = 0.3, frequency: float = 1.0) -> Barrier:
    """``value + amplitude * sin(2 pi frequency t)``."""
    return Barrier.from_function(mesh, lambda t: value + amplitude * np.sin(2.0 * math.pi * frequency * t))


BARRIERS = {
    "constant": _constant,
    "linear": _linear,
    "sinusoidal": _sinusoidal,
    "minus_inf": lambda mesh: Barrier.constant(mesh, -math.inf),
    "plus_inf": lambda mesh: Barrier.constant(mesh, math.inf),
}


def barrier(name: str, mesh: TimeMesh, **params) -> Barrier:
    try:
        make = BARRIERS[name]
    except KeyError:
        raise DomainError(f"unknown barrier preset {name!r}; expected one of {sorted(BARRIERS)}") from None
    return make(mesh, **params)


def gaussian_u0(grid: SpatialGrid, mean: float = 0.0, std: float = 1.0) -> DensityField:
    return DensityField.gaussian(grid, mean, std)


def exponential_survival(rate: float, lam: float, horizon: float) -> SurvivalSpec:
    return SurvivalSpec.exponential(rate, lam, horizon)
