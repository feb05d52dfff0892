"""Run configuration: one JSON document, validated up front, every default explicit.

Relative file paths inside a config resolve against the config file's directory.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import presets
from .diffusion import DiffusionCoefficients, DiffusionProblem, solve_forward_diffusion, weighted_masses
from .domain import Barrier, DensityField, SpatialGrid, TimeMesh
from .errors import DomainError
from .forward import ForwardConfig, solve_forward
from .inverse import InverseConfig
from .io import read_table
from .montecarlo import PathConfig
from .pricing import PricingSpec, payoff
from .survival import SurvivalSpec

__all__ = ["RunConfig", "load_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", ser_json_inf_nan="strings", validate_default=True)


class GridSection(_Section):
    x_min: float = -12.0
    x_max: float = 12.0
    dx: float = Field(1e-2, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        return self

    def build(self) -> SpatialGrid:
        return SpatialGrid.with_spacing(self.x_min, self.x_max, self.dx)


class TimeSection(_Section):
    horizon: float = Field(1.0, gt=0)
    n_steps: int = Field(1000, ge=1)

    def build(self) -> TimeMesh:
        return TimeMesh(self.horizon, self.n_steps)


class U0Section(_Section):
    """Initial density: ``gaussian`` preset or a two-column ``x, density`` CSV."""

    kind: Literal["gaussian", "csv"] = "gaussian"
    mean: float = 0.0
    std: float = Field(1.0, gt=0)
    path: Optional[str] = None

    def build(self, grid: SpatialGrid, base: Path) -> DensityField:
        if self.kind == "gaussian":
            return presets.gaussian_u0(grid, self.mean, self.std)
        data = read_table(_resolve(self.path, base), 2)
        return DensityField(grid, np.interp(grid.nodes, data[:, 0], data[:, 1], left=0.0, right=0.0))


class BarrierSection(_Section):
    """Barrier preset, or a two-column ``t, b`` CSV interpolated onto the mesh."""

    kind: Literal["constant", "linear", "sinusoidal", "minus_inf", "plus_inf", "csv"] = "constant"
    value: float = 0.0
    slope: float = 0.0
    amplitude: float = 0.3
    frequency: float = 1.0
    path: Optional[str] = None

    def build(self, mesh: TimeMesh, base: Path) -> Barrier:
        if self.kind == "csv":
            data = read_table(_resolve(self.path, base), 2)
            return Barrier(mesh, np.interp(mesh.times, data[:, 0], data[:, 1]))
        params = {
            "constant": dict(value=self.value),
            "linear": dict(value=self.value, slope=self.slope),
            "sinusoidal": dict(value=self.value, amplitude=self.amplitude, frequency=self.frequency),
        }.get(self.kind, {})
        return presets.barrier(self.kind, mesh, **params)


class SurvivalSection(_Section):
    """Target survival: ``exponential`` (``G = exp(-rate t)``), a ``t, G`` CSV, or
    ``from_barrier``, which tabulates the survival of a forward solve under ``barrier``."""

    kind: Literal["exponential", "csv", "from_barrier"] = "exponential"
    rate: float = Field(0.5, ge=0)
    path: Optional[str] = None
    barrier: BarrierSection = BarrierSection()


class ForwardSection(_Section):
    scheme: Literal["crank_nicolson", "implicit_euler"] = "crank_nicolson"
    rannacher_steps: int = Field(2, ge=0)


class InverseSection(_Section):
    max_iterations: int = Field(50, ge=1)
    barrier_tol: float = Field(1e-6, gt=0)
    check_compatibility: bool = True
    clamp_tol: float = Field(1e-9, ge=0)


class CompatSection(_Section):
    n_check: int = Field(101, ge=1)
    mass_tol: float = Field(1e-6, gt=0)


class MonteCarloSection(_Section):
    n_paths: int = Field(100_000, ge=1)
    dt_sim: float = Field(1e-3, gt=0)
    antithetic: bool = True
    estimator: Literal["expectation", "exponential_clock"] = "expectation"
    block_size: int = Field(1 << 15, ge=2)
    report_times: Optional[list[float]] = None
    density_points: list[float] = []
    density_time: Optional[float] = None
    pde_budget: float = Field(5e-3, ge=0)


class DiffusionSection(_Section):
    kind: Literal["brownian", "ou", "gbm-log", "csv"] = "ou"
    theta: float = 1.0
    mean: float = 0.0
    sigma: float = Field(1.0, gt=0)
    drift: float = 0.05
    vol: float = Field(0.3, gt=0)
    path: Optional[str] = None
    mc_paths: int = Field(0, ge=0)

    def build(self, grid: SpatialGrid, base: Path) -> DiffusionCoefficients:
        if self.kind == "brownian":
            return DiffusionCoefficients.brownian(grid)
        if self.kind == "ou":
            return DiffusionCoefficients.ou(grid, self.theta, self.mean, self.sigma)
        if self.kind == "gbm-log":
            return DiffusionCoefficients.gbm_log(grid, self.drift, self.vol)
        return DiffusionCoefficients.from_csv(grid, _resolve(self.path, base))


class PricingSection(_Section):
    x0: float = Field(1.0, gt=0)
    mu: float = 0.05
    sigma: float = Field(0.3, gt=0)
    rho: float = Field(0.5, ge=-1, le=1)
    payoff: Literal["call", "put", "digital", "identity"] = "call"
    strike: float = 1.0
    literal_generator: bool = False
    theta: float = Field(1.0 / 3.0, gt=0, le=1)
    damping_steps: int = Field(2, ge=0)
    n_steps: int = Field(100, ge=1)
    nz: int = Field(161, ge=4)
    ny: int = Field(241, ge=4)
    y_min: float = -8.0
    y_max: float = 8.0
    mc_paths: int = Field(0, ge=0)


class OutputSection(_Section):
    history_stride: int = Field(10, ge=1)


class RunConfig(_Section):
    grid: GridSection = GridSection()
    time: TimeSection = TimeSection()
    lam: float = Field(1.0, gt=0)
    u0: U0Section = U0Section()
    barrier: BarrierSection = BarrierSection()
    survival: SurvivalSection = SurvivalSection()
    forward: ForwardSection = ForwardSection()
    inverse: InverseSection = InverseSection()
    compat: CompatSection = CompatSection()
    monte_carlo: MonteCarloSection = MonteCarloSection()
    diffusion: DiffusionSection = DiffusionSection()
    pricing: PricingSection = PricingSection()
    output: OutputSection = OutputSection()
    seed: int = Field(0, ge=0, lt=2**64)
    threads: int = Field(1, ge=1)
    base_dir: str = "."

    @property
    def base(self) -> Path:
        return Path(self.base_dir)

    # -- builders ---------------------------------------------------------

    def build_grid(self) -> SpatialGrid:
        return self.grid.build()

    def build_mesh(self) -> TimeMesh:
        return self.time.build()

    def build_u0(self, grid: SpatialGrid | None = None) -> DensityField:
        return self.u0.build(grid or self.build_grid(), self.base)

    def build_barrier(self, mesh: TimeMesh | None = None) -> Barrier:
        return self.barrier.build(mesh or self.build_mesh(), self.base)

    def forward_config(self) -> ForwardConfig:
        return ForwardConfig(self.forward.scheme, self.forward.rannacher_steps, self.lam)

    def inverse_config(self) -> InverseConfig:
        s = self.inverse
        return InverseConfig(s.max_iterations, s.barrier_tol, self.forward_config(), s.check_compatibility, s.clamp_tol)

    def path_config(self) -> PathConfig:
        m = self.monte_carlo
        return PathConfig(m.n_paths, m.dt_sim, self.seed, m.antithetic, m.estimator, m.block_size, self.threads)

    def report_times(self) -> list[float]:
        if self.monte_carlo.report_times is not None:
            return list(self.monte_carlo.report_times)
        T = self.time.horizon
        return [0.25 * T, 0.5 * T, T]

    def build_survival(self, grid: SpatialGrid, mesh: TimeMesh, u0: DensityField) -> SurvivalSpec:
        s = self.survival
        if s.kind == "exponential":
            return presets.exponential_survival(s.rate, self.lam, self.time.horizon)
        if s.kind == "csv":
            return SurvivalSpec.from_csv(_resolve(s.path, self.base), self.lam)
        target = s.barrier.build(mesh, self.base)
        h = solve_forward(u0, target, mesh, self.forward_config())
        return SurvivalSpec.from_mesh_values(mesh, h.masses(), self.lam)

    def build_diffusion(self, grid: SpatialGrid, mesh: TimeMesh, with_survival: bool) -> DiffusionProblem:
        coeffs = self.diffusion.build(grid, self.base)
        f = self.build_u0(grid)
        if not with_survival:
            return DiffusionProblem(coeffs, f, lam=self.lam)
        s = self.survival
        if s.kind == "from_barrier":
            fwd = DiffusionProblem(coeffs, f, lam=self.lam)
            h = solve_forward_diffusion(fwd, s.barrier.build(mesh, self.base), mesh, self.forward_config())
            G = SurvivalSpec.from_mesh_values(mesh, weighted_masses(h, coeffs.m), self.lam)
        else:
            G = self.build_survival(grid, mesh, f)
        return DiffusionProblem(coeffs, f, G)

    def build_pricing(self) -> PricingSpec:
        p = self.pricing
        mesh = TimeMesh(self.time.horizon, p.n_steps)
        b = self.barrier.build(mesh, self.base)
        return PricingSpec.standard(
            p.x0, p.mu, p.sigma, p.rho, payoff(p.payoff, p.strike), b, self.lam,
            y_window=(p.y_min, p.y_max), nz=p.nz, ny=p.ny,
            literal_generator=p.literal_generator, theta=p.theta, damping_steps=p.damping_steps,
        )

    def manifest_dump(self) -> dict:
        # non-finite floats become "Infinity"/"-Infinity"/"NaN" strings
        return json.loads(self.model_dump_json())


def _resolve(path: str | None, base: Path) -> Path:
    if not path:
        raise DomainError("a 'path' is required for csv inputs")
    p = Path(path)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Parse a JSON config (or defaults when ``path`` is None) and apply non-None overrides."""
    data: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        data = json.loads(path.read_text(), parse_constant=_constant)
        if not isinstance(data, dict):
            raise DomainError("config must be a JSON object")
        base = path.parent
    data.setdefault("base_dir", str(base))
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return RunConfig.model_validate(data)


def _constant(name: str) -> float:
    return {"Infinity": math.inf, "-Infinity": -math.inf}.get(name, math.nan)
