"""Recover the barrier from a target survival function by monotone iteration.

Starting from the heat flow ``u_1`` of ``u0``, alternate

* ``b_k(t_j)``: the level at which ``lam * partial_mass(u_k(t_j), b) = -G'(t_j)``,
  solved independently at every mesh time from the same iterate;
* ``u_{k+1}``: the forward solve of ``u0`` under ``b_k``.

Densities decrease and barriers increase from one iterate to the next; the
loop stops once the sup-norm barrier change drops below ``barrier_tol``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .domain import (
    Barrier,
    DensityField,
    DensityHistory,
    SpatialGrid,
    TimeMesh,
    cumulative_mass,
    invert_cumulative,
    partial_rows,
)
from .errors import CompatibilityViolation, DomainError, NonConvergence
from .forward import ForwardConfig, _heat_bands, _march
from .survival import SurvivalSpec, check_compatibility, derivative

__all__ = [
    "InverseConfig",
    "IterationRecord",
    "IterationDiagnostics",
    "InverseResult",
    "ConsistencyReport",
    "barrier_from_constraint",
    "iterate",
    "consistency_report",
    "l1_contraction_check",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InverseConfig:
    max_iterations: int = 50
    barrier_tol: float = 1e-6
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    check_compatibility: bool = True
    # largest excursion of -G' outside (0, lam * mass) that is clamped instead of rejected
    clamp_tol: float = 1e-9

    def __post_init__(self) -> None:
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise DomainError("max_iterations must be an integer >= 1")
        if not self.barrier_tol > 0:
            raise DomainError("barrier_tol must be positive")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    barrier_change: float
    u_monotonicity_violation: float
    b_monotonicity_violation: float
    mass_residual: float
    mass_deficit: float
    constraint_residual: float

    FIELDS = (
        "k",
        "barrier_change",
        "u_monotonicity_violation",
        "b_monotonicity_violation",
        "mass_residual",
        "mass_deficit",
        "constraint_residual",
    )

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


@dataclass
class IterationDiagnostics:
    """Per-iteration metrics, appended in iteration order.

    ``u_monotonicity_violation`` is ``max(u_k - u_{k-1})`` and
    ``b_monotonicity_violation`` is ``max(b_{k-1} - b_k)``; both should stay at
    rounding level.  ``mass_deficit`` is ``max_t (G(t) - mass(u_k(t)))``.
    For weighted problems all density quantities refer to ``u * m``.
    """

    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    clamped: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def max_u_violation(self) -> float:
        return max((r.u_monotonicity_violation for r in self.records[1:]), default=0.0)

    @property
    def max_b_violation(self) -> float:
        return max((r.b_monotonicity_violation for r in self.records[1:]), default=0.0)


class InverseResult(NamedTuple):
    history: DensityHistory
    barrier: Barrier
    diagnostics: IterationDiagnostics


@dataclass(frozen=True)
class ConsistencyReport:
    mass_residual: float
    constraint_residual: float
    integrated_residual: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _targets(gprime: np.ndarray, lam: float, masses: np.ndarray, clamp_tol: float,
             times: np.ndarray, k: int | None, weighted: bool = False) -> tuple[np.ndarray, int]:
    """Partial-mass targets ``-G'/lam``, clamped when marginally out of range."""
    rate = -np.asarray(gprime, dtype=float)
    cap = lam * masses
    low = rate <= 0.0
    high = rate >= cap
    bad = (low & (rate < -clamp_tol)) | (high & (rate - cap > clamp_tol))
    if np.any(bad):
        j = int(np.argmax(bad))
        what = "lam * weighted mass" if weighted else "lam * mass"
        raise CompatibilityViolation(
            f"-G'(t)={rate[j]:.6g} outside (0, {what}={cap[j]:.6g}) at t={times[j]:.6g}"
            + (f", iteration {k}" if k is not None else ""),
            time=float(times[j]),
            iteration=k,
        )
    n_clamped = int(np.count_nonzero(low | high))
    if n_clamped:
        log.warning("clamped %d marginal -G' targets into (0, lam * mass)", n_clamped)
    return np.clip(rate, 0.0, cap) / lam, n_clamped


def barrier_from_constraint(u: DensityField, gprime: float, lam: float = 1.0) -> float:
    """The smallest ``alpha`` with ``lam * partial_mass(u, alpha) = -gprime``."""
    cum = cumulative_mass(u.values, u.grid.dx)
    mass = cum[-1]
    if not (0.0 < -gprime < lam * mass):
        raise CompatibilityViolation(f"-G'={-gprime:.6g} outside (0, lam * mass={lam * mass:.6g})")
    return float(invert_cumulative(u.values, cum, u.grid, -gprime / lam))


def _barriers(values: np.ndarray, grid: SpatialGrid, gprime: np.ndarray, lam: float,
              clamp_tol: float, times: np.ndarray, k: int, weighted: bool = False):
    cum = cumulative_mass(values, grid.dx)
    targets, n_clamped = _targets(gprime, lam, cum[:, -1], clamp_tol, times, k, weighted)
    return invert_cumulative(values, cum, grid, targets), cum, n_clamped


def _monotone_iteration(u0: np.ndarray, grid: SpatialGrid, mesh: TimeMesh, bands, weight,
                        gvals: np.ndarray, gprime: np.ndarray, lam: float, cfg: InverseConfig,
                        warn_monotonicity: bool = False):
    """Shared loop; ``weight`` (or ``None``) multiplies densities before mass accounting."""
    fwd = dataclasses.replace(cfg.forward, lam=lam)
    times = mesh.times
    diag = IterationDiagnostics()

    def measured(u):
        return u if weight is None else u * weight

    def record(k, u, b, u_prev, b_prev, cum):
        w = measured(u)
        masses = cum[:, -1]
        achieved = lam * partial_rows(w, cum, grid, b)
        rec = IterationRecord(
            k=k,
            barrier_change=float(np.max(np.abs(b - b_prev))) if b_prev is not None else float("inf"),
            u_monotonicity_violation=float(np.max(w - measured(u_prev))) if u_prev is not None else 0.0,
            b_monotonicity_violation=float(np.max(b_prev - b)) if b_prev is not None else 0.0,
            mass_residual=float(np.max(np.abs(masses - gvals))),
            mass_deficit=float(np.max(gvals - masses)),
            constraint_residual=float(np.max(np.abs(achieved + gprime))),
        )
        diag.records.append(rec)
        return rec

    heat = Barrier.constant(mesh, -np.inf)
    u_prev, _ = _march(u0, bands, heat, mesh, fwd)
    b_prev, cum, n = _barriers(measured(u_prev), grid, gprime, lam, cfg.clamp_tol, times, 1, weight is not None)
    diag.clamped += n
    record(1, u_prev, b_prev, None, None, cum)
    for k in range(2, cfg.max_iterations + 1):
        u, clipped = _march(u0, bands, Barrier(mesh, b_prev), mesh, fwd)
        b, cum, n = _barriers(measured(u), grid, gprime, lam, cfg.clamp_tol, times, k, weight is not None)
        diag.clamped += n
        rec = record(k, u, b, u_prev, b_prev, cum)
        if warn_monotonicity and (rec.u_monotonicity_violation > 1e-10 or rec.b_monotonicity_violation > 1e-10):
            log.warning("iteration %d lost monotonicity (du=%.3e, db=%.3e)", k,
                        rec.u_monotonicity_violation, rec.b_monotonicity_violation)
        if rec.barrier_change < cfg.barrier_tol:
            diag.converged = True
            return InverseResult(DensityHistory(mesh, grid, u, clipped), Barrier(mesh, b), diag)
        u_prev, b_prev = u, b
    raise NonConvergence(
        f"barrier change {diag.records[-1].barrier_change:.3e} still above {cfg.barrier_tol:.1e} "
        f"after {cfg.max_iterations} iterations",
        diagnostics=diag,
    )


def iterate(u0: DensityField, G: SurvivalSpec, mesh: TimeMesh,
            cfg: InverseConfig | None = None) -> InverseResult:
    """Recover ``(u, b)`` with ``mass(u(t)) = G(t)``; the killing rate is ``G.lam``.

    Raises :class:`CompatibilityViolation` if the data fail the up-front check
    (unless disabled) or a target leaves ``(0, lam * mass)`` during the
    iteration, and :class:`NonConvergence` when ``max_iterations`` is exhausted.
    """
    cfg = cfg or InverseConfig()
    if cfg.check_compatibility:
        report = check_compatibility(G, u0, n_check=mesh.n_steps + 1)
        if not report.ok:
            first = report.violations[0]
            raise CompatibilityViolation(
                f"incompatible data: {len(report.violations)} violation(s), first condition "
                f"({first.condition}) at t={first.time:.6g}: lhs={first.lhs:.6g}, rhs={first.rhs:.6g}",
                time=first.time,
            )
    times = mesh.times
    return _monotone_iteration(
        u0.values, u0.grid, mesh, _heat_bands(u0.grid), None,
        np.asarray(G.value(times), dtype=float), np.asarray(derivative(G, times), dtype=float),
        G.lam, cfg,
    )


def consistency_report(h: DensityHistory, b: Barrier, G: SurvivalSpec) -> ConsistencyReport:
    """Residuals of the mass identity, the barrier constraint and its time integral."""
    if b.mesh != h.mesh:
        raise DomainError("history and barrier must share a mesh")
    times = h.mesh.times
    cum = cumulative_mass(h.values, h.grid.dx)
    masses = cum[:, -1]
    g = np.asarray(G.value(times), dtype=float)
    gp = np.asarray(derivative(G, times), dtype=float)
    killed = G.lam * partial_rows(h.values, cum, h.grid, b.values)
    integral = np.concatenate(([0.0], np.cumsum(0.5 * (killed[1:] + killed[:-1]) * np.diff(times))))
    return ConsistencyReport(
        mass_residual=float(np.max(np.abs(masses - g))),
        constraint_residual=float(np.max(np.abs(killed + gp))),
        integrated_residual=float(np.max(np.abs(integral - (g[0] - g)))),
    )


def l1_contraction_check(first: DensityHistory, second: DensityHistory) -> float:
    """``sup_t`` of the discrete L1 distance between two solutions on the same mesh and grid."""
    if first.mesh != second.mesh or first.grid != second.grid:
        raise DomainError("solutions must share mesh and grid")
    if not np.array_equal(first.values[0], second.values[0]):
        raise DomainError("solutions must start from the same u0")
    diff = np.abs(first.values - second.values)
    return float(np.max(cumulative_mass(diff, first.grid.dx)[:, -1]))
