"""Target survival functions, hazard rates and the data compatibility check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .domain import DensityField, TimeMesh, cumulative_mass, invert_cumulative
from .errors import DomainError
from .io import read_table

__all__ = [
    "SurvivalSpec",
    "Violation",
    "CompatibilityReport",
    "derivative",
    "hazard_rate",
    "check_compatibility",
]

_T_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class SurvivalSpec:
    """Survival function ``G`` on ``[0, horizon]`` together with the killing rate ``lam``.

    Build one with :meth:`analytic` (callables for ``G`` and ``G'``) or
    :meth:`tabulated` (samples on increasing times starting at 0).
    """

    lam: float
    horizon: float
    g: Callable | None = field(default=None, repr=False)
    dg: Callable | None = field(default=None, repr=False)
    times: np.ndarray | None = field(default=None, repr=False)
    samples: np.ndarray | None = field(default=None, repr=False)
    _slopes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DomainError(f"killing rate must be positive, got {self.lam}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        probe = np.linspace(0.0, self.horizon, 1001) if self.mode == "analytic" else self.times
        g = np.asarray(self.value(probe), dtype=float)
        if abs(g[0] - 1.0) > 1e-9:
            raise DomainError(f"G(0) must equal 1, got {g[0]}")
        if np.any(g <= 0):
            raise DomainError("G must be positive on [0, T]")
        if np.any(np.diff(g) > 1e-12):
            raise DomainError("G must be non-increasing on [0, T]")

    @property
    def mode(self) -> str:
        return "analytic" if self.times is None else "tabulated"

    @classmethod
    def analytic(cls, g: Callable, dg: Callable, lam: float = 1.0, horizon: float = 1.0) -> "SurvivalSpec":
        return cls(lam=float(lam), horizon=float(horizon), g=g, dg=dg)

    @classmethod
    def exponential(cls, rate: float, lam: float = 1.0, horizon: float = 1.0) -> "SurvivalSpec":
        """``G(t) = exp(-rate t)``, hazard rate ``rate``."""
        return cls.analytic(
            lambda t: np.exp(-rate * np.asarray(t, dtype=float)),
            lambda t: -rate * np.exp(-rate * np.asarray(t, dtype=float)),
            lam=lam,
            horizon=horizon,
        )

    @classmethod
    def tabulated(cls, times, samples, lam: float = 1.0) -> "SurvivalSpec":
        t = np.array(times, dtype=float)
        g = np.array(samples, dtype=float)
        if t.ndim != 1 or t.shape != g.shape or t.size < 3:
            raise DomainError("tabulated G needs matching 1-D arrays with at least 3 samples")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise DomainError("tabulated times must start at 0 and be strictly increasing")
        slopes = np.gradient(g, t, edge_order=2)
        for a in (t, g, slopes):
            a.flags.writeable = False
        return cls(lam=float(lam), horizon=float(t[-1]), times=t, samples=g, _slopes=slopes)

    @classmethod
    def from_mesh_values(cls, mesh: TimeMesh, samples, lam: float = 1.0) -> "SurvivalSpec":
        return cls.tabulated(mesh.times, samples, lam)

    @classmethod
    def from_csv(cls, path: str | Path, lam: float = 1.0) -> "SurvivalSpec":
        """Read a two-column ``t,G`` CSV (an optional header line is skipped)."""
        data = read_table(path, 2)
        return cls.tabulated(data[:, 0], data[:, 1], lam)

    def _check_time(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        slack = _T_SLACK * max(1.0, self.horizon)
        if np.any(t_arr < -slack) or np.any(t_arr > self.horizon + slack):
            raise DomainError(f"t outside [0, {self.horizon}]")
        return np.clip(t_arr, 0.0, self.horizon)

    def value(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.times is None:
            out = np.asarray(self.g(t_arr), dtype=float)
            out = np.broadcast_to(out, t_arr.shape).copy()
        else:
            out = np.interp(t_arr, self.times, self.samples)
        return out[()] if np.ndim(out) == 0 else out


def derivative(G: SurvivalSpec, t):
    """``G'(t)``: the supplied callable, or second-order finite differences of the table."""
    t_arr = G._check_time(t)
    if G.mode == "analytic":
        out = np.broadcast_to(np.asarray(G.dg(t_arr), dtype=float), t_arr.shape).copy()
    else:
        out = np.interp(t_arr, G.times, G._slopes)
    return out[()] if np.ndim(out) == 0 else out


def hazard_rate(G: SurvivalSpec, t):
    """``-G'(t) / G(t)``."""
    g = np.asarray(G.value(G._check_time(t)), dtype=float)
    if np.any(g <= 0):
        raise DomainError("hazard rate undefined where G <= 0")
    out = -np.asarray(derivative(G, t)) / g
    return out[()] if np.ndim(out) == 0 else out


class Violation(NamedTuple):
    time: float
    condition: str
    lhs: float
    rhs: float


@dataclass(frozen=True)
class CompatibilityReport:
    violations: tuple[Violation, ...]
    initial_barrier: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        out = [f"ok = {str(self.ok).lower()}", f"initial_barrier = {self.initial_barrier:.12g}"]
        for v in self.violations:
            out.append(f"violation condition=({v.condition}) t={v.time:.6g} lhs={v.lhs:.6g} rhs={v.rhs:.6g}")
        return out


def check_compatibility(
    G: SurvivalSpec, u0: DensityField, n_check: int = 101, mass_tol: float = 1e-6
) -> CompatibilityReport:
    """Check the four compatibility conditions and report every failure.

    (i)   u0 > 0 on interior nodes;
    (ii)  0 < -G'(t) < lam G(t) at ``n_check`` equispaced times;
    (iii) |mass(u0) - 1| <= mass_tol;
    (iv)  the initial barrier solving lam * partial_mass(u0, b0) = -G'(0) exists.
    """
    violations: list[Violation] = []
    interior = u0.values[1:-1]
    if np.any(interior <= 0):
        violations.append(Violation(0.0, "i", float(interior.min()), 0.0))

    times = np.linspace(0.0, G.horizon, max(int(n_check), 1))
    lhs = -np.asarray(derivative(G, times), dtype=float)
    rhs = G.lam * np.asarray(G.value(times), dtype=float)
    bad = ~((lhs > 0) & (lhs < rhs))
    for t, a, b in zip(times[bad], lhs[bad], rhs[bad]):
        violations.append(Violation(float(t), "ii", float(a), float(b)))

    cum = cumulative_mass(u0.values, u0.grid.dx)
    mass = float(cum[-1])
    if abs(mass - 1.0) > mass_tol:
        violations.append(Violation(0.0, "iii", mass, 1.0))

    target = float(-derivative(G, 0.0)) / G.lam
    if 0 < target < mass:
        b0 = float(invert_cumulative(u0.values, cum, u0.grid, target))
    else:
        b0 = float("nan")
        violations.append(Violation(0.0, "iv", target, mass))
    return CompatibilityReport(tuple(violations), b0)
