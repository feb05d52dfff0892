"""Grids, fields and barriers shared by every solver.

All quadrature is the trapezoid rule on a uniform grid, which is exact for the
piecewise-linear reconstruction of a nodal field.  The same reconstruction is
inverted when a barrier is recovered from a target partial mass, so mass
accounting and root finding agree to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import DomainError

__all__ = [
    "SpatialGrid",
    "TimeMesh",
    "DensityField",
    "DensityHistory",
    "Barrier",
    "trapezoid_mass",
    "partial_mass",
    "discrete_norms",
    "cumulative_mass",
    "partial_rows",
    "invert_cumulative",
    "gaussian_pdf",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on ``[x_min, x_max]`` with ``n_nodes`` nodes."""

    x_min: float
    x_max: float
    n_nodes: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise DomainError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise DomainError(f"x_min={self.x_min} must be below x_max={self.x_max}")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise DomainError(f"n_nodes must be an integer >= 3, got {self.n_nodes}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_min + self.dx * np.arange(self.n_nodes)
        x[-1] = self.x_max
        x.flags.writeable = False
        return x

    def nearest_index(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.dx))
        return min(max(i, 0), self.n_nodes - 1)

    @classmethod
    def with_spacing(cls, x_min: float, x_max: float, dx: float) -> "SpatialGrid":
        """Grid whose spacing is ``dx`` (``x_max`` is moved out to the next node)."""
        n = int(math.ceil((x_max - x_min) / dx - 1e-9)) + 1
        return cls(x_min, x_min + (n - 1) * dx, n)

    @classmethod
    def default_window(cls, mean: float, std: float, horizon: float, dx: float = 1e-2) -> "SpatialGrid":
        """Symmetric window wide enough that a heat-evolved density is negligible at the edges."""
        half = 12.0 * std + 8.0 * math.sqrt(horizon)
        return cls.with_spacing(mean - half, mean + half, dx)


@dataclass(frozen=True)
class TimeMesh:
    """Uniform mesh ``t_j = j T / n_steps`` on ``[0, T]``."""

    horizon: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be an integer >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.n_steps + 1)
        t.flags.writeable = False
        return t

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the mesh time equal to ``t``; raises if ``t`` is not on the mesh."""
        j = int(round(t / self.dt))
        if 0 <= j <= self.n_steps and abs(self.times[j] - t) <= rtol * max(1.0, self.horizon):
            return j
        raise DomainError(f"t={t} is not a mesh time (dt={self.dt})")


def _as_values(values, n: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != (n,):
        raise DomainError(f"expected {n} values, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class DensityField:
    """Non-negative nodal values of a (sub-)probability density."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_values(self.values, self.grid.n_nodes)
        if not np.all(np.isfinite(arr)):
            raise DomainError("density values must be finite")
        if np.any(arr < 0):
            raise DomainError(f"density values must be >= 0 (min {arr.min():.3e})")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_function(cls, grid: SpatialGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "DensityField":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float))

    @classmethod
    def gaussian(cls, grid: SpatialGrid, mean: float = 0.0, std: float = 1.0) -> "DensityField":
        return cls(grid, gaussian_pdf(grid.nodes, mean, std))

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "DensityField":
        return cls(grid, np.zeros(grid.n_nodes))

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation of the field; zero outside the grid."""
        return np.interp(x, self.grid.nodes, self.values, left=0.0, right=0.0)


@dataclass(frozen=True, eq=False)
class DensityHistory:
    """Snapshots of a density at every mesh time, stored as a ``(n_steps + 1, n_nodes)`` array.

    ``clipped_mass`` is the total mass removed by clipping negative undershoot
    during the solve that produced the history.
    """

    mesh: TimeMesh
    grid: SpatialGrid
    values: np.ndarray
    clipped_mass: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        expected = (self.mesh.n_steps + 1, self.grid.n_nodes)
        if arr.shape != expected:
            raise DomainError(f"history shape {arr.shape} != {expected}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    def snapshot(self, j: int) -> DensityField:
        return DensityField(self.grid, self.values[j])

    @property
    def snapshots(self) -> list[DensityField]:
        return [self.snapshot(j) for j in range(len(self))]

    def masses(self) -> np.ndarray:
        return cumulative_mass(self.values, self.grid.dx)[:, -1]


@dataclass(frozen=True, eq=False)
class Barrier:
    """Barrier sampled on a time mesh, linear in between.

    ``-inf`` and ``+inf`` are accepted as sentinels for "no killing" and
    "killing everywhere"; a constant sentinel evaluates to itself.
    """

    mesh: TimeMesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = _as_values(self.values, self.mesh.n_steps + 1)
        if np.any(np.isnan(arr)):
            raise DomainError("barrier values must not be NaN")
        inf = np.isinf(arr)
        if np.any(inf) and not (np.all(arr == arr[0])):
            raise DomainError("infinite barrier sentinels must be constant in time")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def constant(cls, mesh: TimeMesh, value: float) -> "Barrier":
        return cls(mesh, np.full(mesh.n_steps + 1, float(value)))

    @classmethod
    def from_function(cls, mesh: TimeMesh, fn: Callable[[np.ndarray], np.ndarray]) -> "Barrier":
        return cls(mesh, np.broadcast_to(np.asarray(fn(mesh.times), dtype=float), (mesh.n_steps + 1,)))

    def at(self, t):
        """Evaluate by linear interpolation; mesh times return stored values exactly."""
        times = self.mesh.times
        t_arr = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, self.mesh.n_steps - 1)
        left = self.values[i]
        right = self.values[i + 1]
        w = (t_arr - times[i]) / (times[i + 1] - times[i])
        with np.errstate(invalid="ignore"):
            out = np.where(left == right, left, left + w * (right - left))
        out = np.where(w == 0.0, left, out)
        out = np.where(w == 1.0, right, out)
        return out[()] if out.ndim == 0 else out


def gaussian_pdf(x, mean: float = 0.0, std: float = 1.0):
    z = (np.asarray(x, dtype=float) - mean) / std
    return np.exp(-0.5 * z * z) / (std * math.sqrt(2.0 * math.pi))


def cumulative_mass(values: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    v = np.asarray(values, dtype=float)
    cells = 0.5 * dx * (v[..., :-1] + v[..., 1:])
    out = np.zeros(v.shape)
    np.cumsum(cells, axis=-1, out=out[..., 1:])
    return out


def trapezoid_mass(u: DensityField) -> float:
    return float(cumulative_mass(u.values, u.grid.dx)[-1])


def _partial_integral(values: np.ndarray, grid: SpatialGrid, alpha: float, cum: np.ndarray | None = None) -> float:
    # integral of the piecewise-linear interpolant over [x_min, alpha]; values may be signed
    if cum is None:
        cum = cumulative_mass(values, grid.dx)
    if alpha <= grid.x_min:
        return 0.0
    if alpha >= grid.x_max:
        return float(cum[-1])
    dx = grid.dx
    i = min(int((alpha - grid.x_min) / dx), grid.n_nodes - 2)
    s = alpha - grid.nodes[i]
    if s == 0.0:
        return float(cum[i])
    ua, ub = values[i], values[i + 1]
    return float(cum[i] + ua * s + (ub - ua) * s * s / (2.0 * dx))


def partial_rows(values: np.ndarray, cum: np.ndarray, grid: SpatialGrid, alphas) -> np.ndarray:
    """Row-wise :func:`_partial_integral` for a stack of fields and one ``alpha`` per row."""
    alphas = np.asarray(alphas, dtype=float)
    dx = grid.dx
    n = grid.n_nodes
    rows = np.arange(values.shape[0])
    a = np.clip(alphas, grid.x_min, grid.x_max)
    i = np.clip(((a - grid.x_min) / dx).astype(int), 0, n - 2)
    s = a - grid.nodes[i]
    ua, ub = values[rows, i], values[rows, i + 1]
    out = cum[rows, i] + ua * s + (ub - ua) * s * s / (2.0 * dx)
    out = np.where(s == 0.0, cum[rows, i], out)
    out = np.where(alphas <= grid.x_min, 0.0, out)
    return np.where(alphas >= grid.x_max, cum[:, -1], out)


def partial_mass(u: DensityField, alpha: float) -> float:
    """Trapezoid mass of ``u`` on ``[x_min, alpha]``; the last partial cell uses linear interpolation."""
    g = u.grid
    if not (g.x_min <= alpha <= g.x_max):
        raise DomainError(f"alpha={alpha} outside [{g.x_min}, {g.x_max}]")
    return _partial_integral(u.values, g, alpha)


def invert_cumulative(values: np.ndarray, cum: np.ndarray, grid: SpatialGrid, targets) -> np.ndarray:
    """Smallest ``alpha`` with partial mass equal to each target.

    ``values``/``cum`` are either one field (1-D, any number of targets) or one
    field per target (2-D, row-wise).  Targets are clipped into
    ``[0, total mass]``.  Inside the bracketing cell the density is linear, so
    the partial mass is quadratic in ``alpha`` and solved in closed form.
    """
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    dx = grid.dx
    n = grid.n_nodes
    if values.ndim == 1:
        tau = np.clip(targets, 0.0, cum[-1])
        k = np.searchsorted(cum, tau, side="left")
        i = np.clip(k - 1, 0, n - 2)
        ua, ub, c0 = values[i], values[i + 1], cum[i]
    else:
        tau = np.clip(targets, 0.0, cum[:, -1])
        k = np.sum(cum < tau[:, None], axis=1)
        i = np.clip(k - 1, 0, n - 2)
        rows = np.arange(values.shape[0])
        ua, ub, c0 = values[rows, i], values[rows, i + 1], cum[rows, i]
    r = np.maximum(tau - c0, 0.0)
    disc = np.maximum(ua * ua + 2.0 * (ub - ua) * r / dx, 0.0)
    denom = ua + np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0.0, 2.0 * r / denom, 0.0)
    s = np.clip(s, 0.0, dx)
    alpha = grid.nodes[i] + s
    alpha = np.where(k == 0, grid.x_min, alpha)
    return alpha[()] if alpha.ndim == 0 else alpha


def discrete_norms(u: DensityField) -> tuple[float, float]:
    """Discrete L2 and H1 norms (central differences inside, one-sided at the ends)."""
    dx = u.grid.dx
    v = u.values
    l2_sq = cumulative_mass(v * v, dx)[-1]
    du = np.gradient(v, dx, edge_order=1)
    h1_sq = l2_sq + cumulative_mass(du * du, dx)[-1]
    return float(math.sqrt(l2_sq)), float(math.sqrt(h1_sq))
