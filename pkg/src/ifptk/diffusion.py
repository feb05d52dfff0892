"""Killed general diffusions ``dY = mu(Y) dt + sigma(Y) dB`` (experimental).

The unknown ``u`` solves ``u_t = 1/2 sigma^2 u_xx + mu u_x - lam * 1{x <= b} u``
from ``u0 = f / m``, where ``m`` is the speed density.  Weighted by ``m`` it
is the sub-density of the surviving process, so the survival function is
``G(t) = int u m dx`` and the barrier constraint reads
``lam * int_{-inf}^{b} u m dx = -G'(t)``.

Whether the monotone iteration still converges in this setting is open; the
inverse routine records monotonicity diagnostics and only warns when they fail.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import Barrier, DensityField, DensityHistory, SpatialGrid, TimeMesh, cumulative_mass
from .errors import CompatibilityViolation, DomainError
from .io import read_table
from .forward import ForwardConfig, _march, _operator_bands
from .inverse import InverseConfig, InverseResult, _monotone_iteration
from .montecarlo import PathConfig, SurvivalEstimate, _barrier_at, _run, inverse_cdf_sampler
from .survival import SurvivalSpec, check_compatibility, derivative

__all__ = [
    "DiffusionCoefficients",
    "DiffusionProblem",
    "PRESETS",
    "speed_scale",
    "solve_forward_diffusion",
    "weighted_masses",
    "iterate_diffusion",
    "simulate_diffusion_survival",
]

log = logging.getLogger(__name__)

Coefficient = Callable[[np.ndarray], np.ndarray]


def _constant(v: float) -> Coefficient:
    return lambda x: np.full(np.shape(x), float(v))


def speed_scale(coeffs: "DiffusionCoefficients | tuple[Coefficient, Coefficient]",
                grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Speed and scale densities ``(m, s)`` sampled on ``grid``.

    The exponent ``int_0^x 2 mu / sigma^2`` is a trapezoid running sum anchored
    at the node nearest 0.
    """
    mu_fn, sigma_fn = (coeffs.mu, coeffs.sigma) if isinstance(coeffs, DiffusionCoefficients) else coeffs
    x = grid.nodes
    mu = np.broadcast_to(np.asarray(mu_fn(x), dtype=float), x.shape)
    sigma = np.broadcast_to(np.asarray(sigma_fn(x), dtype=float), x.shape)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma)):
        raise DomainError("drift and volatility must be finite on the grid")
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive at every node")
    ratio = 2.0 * mu / sigma**2
    running = cumulative_mass(ratio, grid.dx)
    expo = running - running[grid.nearest_index(0.0)]
    return (2.0 / sigma**2) * np.exp(expo), np.exp(-expo)


@dataclass(frozen=True, eq=False)
class DiffusionCoefficients:
    """Drift and volatility callables plus their samples on a grid."""

    name: str
    mu: Coefficient
    sigma: Coefficient
    grid: SpatialGrid
    mu_values: np.ndarray
    sigma_values: np.ndarray
    m: np.ndarray
    s: np.ndarray

    @classmethod
    def on_grid(cls, grid: SpatialGrid, mu: Coefficient, sigma: Coefficient,
                name: str = "custom") -> "DiffusionCoefficients":
        x = grid.nodes
        m, s = speed_scale((mu, sigma), grid)
        mu_v = np.broadcast_to(np.asarray(mu(x), dtype=float), x.shape).copy()
        sig_v = np.broadcast_to(np.asarray(sigma(x), dtype=float), x.shape).copy()
        for a in (mu_v, sig_v, m, s):
            a.flags.writeable = False
        return cls(name, mu, sigma, grid, mu_v, sig_v, m, s)

    @classmethod
    def brownian(cls, grid: SpatialGrid) -> "DiffusionCoefficients":
        return cls.on_grid(grid, _constant(0.0), _constant(1.0), "brownian")

    @classmethod
    def ou(cls, grid: SpatialGrid, theta: float = 1.0, mean: float = 0.0,
           sigma: float = 1.0) -> "DiffusionCoefficients":
        """Ornstein-Uhlenbeck ``mu(x) = theta (mean - x)``."""
        return cls.on_grid(grid, lambda x: theta * (mean - np.asarray(x, dtype=float)), _constant(sigma), "ou")

    @classmethod
    def gbm_log(cls, grid: SpatialGrid, drift: float = 0.05, vol: float = 0.3) -> "DiffusionCoefficients":
        """Log-price of a geometric Brownian motion: ``mu = drift - vol^2/2``, ``sigma = vol``."""
        return cls.on_grid(grid, _constant(drift - 0.5 * vol**2), _constant(vol), "gbm-log")

    @classmethod
    def from_csv(cls, grid: SpatialGrid, path: str | Path) -> "DiffusionCoefficients":
        """Tabulated ``x, mu, sigma`` columns, linearly interpolated (held constant beyond the table)."""
        data = read_table(path, 3)
        if data.shape[0] < 2 or np.any(np.diff(data[:, 0]) <= 0):
            raise DomainError(f"{path}: need >= 2 rows of increasing x with columns x, mu, sigma")
        xs, mus, sigs = data.T
        return cls.on_grid(grid, lambda x: np.interp(x, xs, mus), lambda x: np.interp(x, xs, sigs), "csv")

    def identity_residual(self) -> float:
        """``max |m s sigma^2 - 2|``; zero up to rounding."""
        return float(np.max(np.abs(self.m * self.s * self.sigma_values**2 - 2.0)))


PRESETS = {
    "brownian": DiffusionCoefficients.brownian,
    "ou": DiffusionCoefficients.ou,
    "gbm-log": DiffusionCoefficients.gbm_log,
}


@dataclass(frozen=True, eq=False)
class DiffusionProblem:
    """Coefficients, the initial law ``f`` of ``Y_0`` and (for inverse runs) the target ``G``."""

    coefficients: DiffusionCoefficients
    f: DensityField
    survival: SurvivalSpec | None = None
    lam: float | None = None
    mass_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.f.grid != self.coefficients.grid:
            raise DomainError("f and the coefficients must share a grid")
        if np.any(self.f.values[1:-1] <= 0):
            raise DomainError("f must be positive on interior nodes")
        mass = float(cumulative_mass(self.f.values, self.f.grid.dx)[-1])
        if abs(mass - 1.0) > self.mass_tol:
            raise DomainError(f"f must have unit mass, got {mass:.9g}")
        lam = self.lam if self.lam is not None else (self.survival.lam if self.survival else 1.0)
        if self.survival is not None and lam != self.survival.lam:
            raise DomainError("lam disagrees with the survival spec")
        if not (math.isfinite(lam) and lam > 0):
            raise DomainError("lam must be positive")
        object.__setattr__(self, "lam", float(lam))

    @property
    def grid(self) -> SpatialGrid:
        return self.f.grid

    @property
    def u0(self) -> DensityField:
        return DensityField(self.grid, self.f.values / self.coefficients.m)

    def bands(self):
        c = self.coefficients
        return _operator_bands(self.grid, 0.5 * c.sigma_values**2, c.mu_values)


def solve_forward_diffusion(problem: DiffusionProblem, b: Barrier, mesh: TimeMesh | None = None,
                            cfg: ForwardConfig | None = None) -> DensityHistory:
    """History of ``u`` (not ``u m``); see :func:`weighted_masses` for the survival curve."""
    mesh = mesh or b.mesh
    if b.mesh != mesh:
        raise DomainError("barrier is not sampled on the solve mesh")
    cfg = dataclasses.replace(cfg or ForwardConfig(), lam=problem.lam)
    values, clipped = _march(problem.u0.values, problem.bands(), b, mesh, cfg)
    return DensityHistory(mesh, problem.grid, values, clipped)


def weighted_masses(h: DensityHistory, m: np.ndarray) -> np.ndarray:
    """``int u(t_j) m dx`` for every snapshot."""
    return cumulative_mass(h.values * m, h.grid.dx)[:, -1]


def iterate_diffusion(problem: DiffusionProblem, mesh: TimeMesh,
                      cfg: InverseConfig | None = None) -> InverseResult:
    """Monotone iteration with the speed-weighted mass and constraint.

    Loss of monotonicity between iterates is logged and kept in the
    diagnostics rather than raised.
    """
    G = problem.survival
    if G is None:
        raise DomainError("inverse runs need a survival spec")
    cfg = cfg or InverseConfig()
    if cfg.check_compatibility:
        report = check_compatibility(G, problem.f, n_check=mesh.n_steps + 1)
        if not report.ok:
            first = report.violations[0]
            raise CompatibilityViolation(
                f"incompatible data: {len(report.violations)} violation(s), first condition "
                f"({first.condition}) at t={first.time:.6g}",
                time=first.time,
            )
    times = mesh.times
    return _monotone_iteration(
        problem.u0.values, problem.grid, mesh, problem.bands(), problem.coefficients.m,
        np.asarray(G.value(times), dtype=float), np.asarray(derivative(G, times), dtype=float),
        G.lam, cfg, warn_monotonicity=True,
    )


def simulate_diffusion_survival(problem: DiffusionProblem, b: Barrier, report_times,
                                cfg: PathConfig) -> SurvivalEstimate:
    """Euler-Maruyama oracle for ``E[exp(-lam A_t)]`` with ``Y_0 ~ f``.

    Occupation uses the same midpoint rule as the Brownian oracle; antithetic
    partners reuse ``Y_0`` with negated increments.
    """
    times = np.atleast_1d(np.asarray(report_times, dtype=float))
    if times.size == 0:
        raise DomainError("report_times is empty")
    if np.any(times < 0) or np.any(times > b.mesh.horizon * (1 + 1e-12)):
        raise DomainError(f"report times must lie in [0, {b.mesh.horizon}]")
    record = np.array([cfg.steps_to(t) for t in times], dtype=np.int64)
    dt = cfg.dt_sim
    sq = math.sqrt(dt)
    n_steps = int(record.max())
    b_mid = _barrier_at(b, (np.arange(n_steps) + 0.5) * dt)
    mu, sigma = problem.coefficients.mu, problem.coefficients.sigma
    sampler = inverse_cdf_sampler(problem.f)
    signs = (1.0, -1.0) if cfg.antithetic else (1.0,)
    lam = problem.lam

    def job(rng: np.random.Generator, n: int) -> np.ndarray:
        y0 = sampler(rng, n)
        ys = [y0.copy() for _ in signs]
        counts = [np.zeros(n, dtype=np.int64) for _ in signs]
        out = [np.zeros((record.size, n)) for _ in signs]
        for j in range(n_steps + 1):
            for slot in np.nonzero(record == j)[0]:
                for leg in range(len(signs)):
                    out[leg][slot] = counts[leg]
            if j == n_steps:
                break
            z = rng.standard_normal(n) * sq
            for leg, sign in enumerate(signs):
                y = ys[leg]
                nxt = y + mu(y) * dt + sigma(y) * sign * z
                counts[leg] += 0.5 * (y + nxt) <= b_mid[j]
                ys[leg] = nxt
        w = [np.exp(-lam * dt * c) for c in out]
        return w[0] if len(w) == 1 else 0.5 * (w[0] + w[1])

    mean, se, n_eff = _run(cfg, job)
    return SurvivalEstimate(times, mean, se, n_eff)
