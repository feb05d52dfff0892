"""Command-line entry point: ``ifptk <command> [--config PATH] [--out DIR] [--seed N] [--threads N]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import platform
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import pydantic
import scipy

from . import __version__
from .config import SCHEMA_VERSION, RunConfig, load_config
from .diffusion import iterate_diffusion, simulate_diffusion_survival, solve_forward_diffusion, weighted_masses
from .errors import DomainError, NonConvergence, NumericalFailure
from .forward import solve_forward, weak_residual
from .inverse import consistency_report, iterate
from .io import (
    write_barrier,
    write_diagnostics,
    write_estimate,
    write_history,
    write_json,
    write_matrix,
    write_rows,
    write_summary,
    write_survival,
)
from .montecarlo import feynman_kac_density, simulate_survival
from .pricing import mc_price, price, solve_price_surface
from .survival import check_compatibility

log = logging.getLogger("ifptk")

CSV_HELP = """\
CSV outputs (all with a header row):
  history.csv      t, then one column per grid node (rows every history_stride steps)
  summary.csv      t, mass, min, max, argmax
  survival.csv     t, survival
  barrier.csv      t, b
  diagnostics.csv  k, barrier_change, u_monotonicity_violation,
                   b_monotonicity_violation, mass_residual, mass_deficit, constraint_residual
  mc_survival.csv  t, mean, std_err (leading '# seed=N' comment line)
  comparison.csv   t, mc_mean, mc_std_err, pde, abs_diff, tolerance, agree
  mc_density.csv   x, t, mean, std_err, pde, abs_diff, tolerance, agree
  speed_scale.csv  x, mu, sigma, m, s
  price_surface.csv  x (asset) rows, one column per credit node y, at t = 0
  price.csv        x0, price[, mc_mean, mc_std_err, tolerance, agree]
Every run writes manifest.json (config with all defaults, versions, seed, residuals).

Exit codes: 0 success, 1 numerical failure or incompatible data, 2 usage or config error.
"""


class _Run:
    """Collects output files and residuals for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        self.residuals: dict = {}
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


def _agree(diff: float, se: float, budget: float) -> tuple[float, bool]:
    tol = 3.0 * (se + budget)
    return tol, bool(diff <= tol)


# -- commands -----------------------------------------------------------------


def cmd_check_compat(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    u0 = cfg.build_u0(grid)
    G = cfg.build_survival(grid, mesh, u0)
    report = check_compatibility(G, u0, cfg.compat.n_check, cfg.compat.mass_tol)
    lines = report.lines()
    print("\n".join(lines))
    run.path("compat.txt").write_text("\n".join(lines) + "\n")
    run.residuals = {"ok": report.ok, "initial_barrier": report.initial_barrier,
                     "n_violations": len(report.violations)}
    return 0 if report.ok else 1


def cmd_forward(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    u0 = cfg.build_u0(grid)
    b = cfg.build_barrier(mesh)
    h = solve_forward(u0, b, mesh, cfg.forward_config())
    stride = cfg.output.history_stride
    masses = h.masses()
    write_history(run.path("history.csv"), h, stride)
    write_summary(run.path("summary.csv"), h, 1)
    write_survival(run.path("survival.csv"), mesh.times, masses)
    run.residuals = {
        "clipped_mass": h.clipped_mass,
        "final_survival": float(masses[-1]),
        "weak_residual": weak_residual(h, b, lam=cfg.lam),
    }
    print(f"G(T) = {masses[-1]:.10g}")
    return 0


def cmd_inverse(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    u0 = cfg.build_u0(grid)
    G = cfg.build_survival(grid, mesh, u0)
    try:
        res = iterate(u0, G, mesh, cfg.inverse_config())
    except NonConvergence as exc:
        if exc.diagnostics is not None:
            write_diagnostics(run.path("diagnostics.csv"), exc.diagnostics)
        raise
    write_barrier(run.path("barrier.csv"), res.barrier)
    write_diagnostics(run.path("diagnostics.csv"), res.diagnostics)
    write_history(run.path("history.csv"), res.history, cfg.output.history_stride)
    write_summary(run.path("summary.csv"), res.history, 1)
    rep = consistency_report(res.history, res.barrier, G)
    run.residuals = {
        **rep.as_dict(),
        "iterations": res.diagnostics.iterations,
        "max_u_monotonicity_violation": res.diagnostics.max_u_violation,
        "max_b_monotonicity_violation": res.diagnostics.max_b_violation,
        "clamped_targets": res.diagnostics.clamped,
    }
    if cfg.survival.kind == "from_barrier":
        target = cfg.survival.barrier.build(mesh, cfg.base)
        run.residuals["barrier_error_sup"] = float(np.max(np.abs(res.barrier.values - target.values)))
    print(f"converged in {res.diagnostics.iterations} iterations; b(0) = {res.barrier.values[0]:.8g}")
    return 0


def cmd_mc_verify(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    u0 = cfg.build_u0(grid)
    b = cfg.build_barrier(mesh)
    pcfg = cfg.path_config()
    budget = cfg.monte_carlo.pde_budget
    times = cfg.report_times()
    est = simulate_survival(u0, b, cfg.lam, times, pcfg)
    h = solve_forward(u0, b, mesh, cfg.forward_config())
    pde = np.array([h.masses()[mesh.index_of(t)] for t in times])
    write_estimate(run.path("mc_survival.csv"), est, cfg.seed,
                   extra=[f"n_paths={pcfg.n_paths} dt_sim={pcfg.dt_sim} antithetic={pcfg.antithetic}",
                          "mean estimates P(tau > t); std_err is the standard error of the mean"])
    rows, ok = [], True
    for t, m, se, p in zip(est.times, est.mean, est.std_err, pde):
        tol, agree = _agree(abs(m - p), se, budget)
        ok &= agree
        rows.append((t, m, se, p, abs(m - p), tol, agree))
    write_rows(run.path("comparison.csv"),
               ["t", "mc_mean", "mc_std_err", "pde", "abs_diff", "tolerance", "agree"], rows)
    if cfg.monte_carlo.density_points:
        t_d = cfg.monte_carlo.density_time or mesh.horizon
        snap = h.snapshot(mesh.index_of(t_d))
        drows = []
        for x in cfg.monte_carlo.density_points:
            m, se = feynman_kac_density(x, t_d, u0, b, cfg.lam, pcfg)
            p = float(snap(x))
            tol, agree = _agree(abs(m - p), se, budget)
            ok &= agree
            drows.append((x, t_d, m, se, p, abs(m - p), tol, agree))
        write_rows(run.path("mc_density.csv"),
                   ["x", "t", "mean", "std_err", "pde", "abs_diff", "tolerance", "agree"], drows)
    run.residuals = {"max_abs_diff": float(np.max(np.abs(est.mean - pde))), "agree": bool(ok)}
    print("agreement: " + ("all within tolerance" if ok else "DISAGREEMENT (see comparison files)"))
    return 0


def cmd_diffusion_forward(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    problem = cfg.build_diffusion(grid, mesh, with_survival=False)
    b = cfg.build_barrier(mesh)
    h = solve_forward_diffusion(problem, b, mesh, cfg.forward_config())
    c = problem.coefficients
    weighted = h.values * c.m
    masses = weighted_masses(h, c.m)
    write_rows(run.path("speed_scale.csv"), ["x", "mu", "sigma", "m", "s"],
               zip(grid.nodes, c.mu_values, c.sigma_values, c.m, c.s))
    write_history(run.path("history.csv"), h, cfg.output.history_stride, values=weighted)
    write_summary(run.path("summary.csv"), h, 1, values=weighted)
    write_survival(run.path("survival.csv"), mesh.times, masses)
    run.residuals = {"final_survival": float(masses[-1]), "clipped_mass": h.clipped_mass,
                     "speed_scale_identity": c.identity_residual()}
    if cfg.diffusion.mc_paths:
        pcfg = dataclasses.replace(cfg.path_config(), n_paths=cfg.diffusion.mc_paths)
        times = cfg.report_times()
        est = simulate_diffusion_survival(problem, b, times, pcfg)
        write_estimate(run.path("mc_survival.csv"), est, cfg.seed)
        pde = np.array([masses[mesh.index_of(t)] for t in times])
        run.residuals["mc_agree"] = bool(all(
            _agree(abs(m - p), se, cfg.monte_carlo.pde_budget)[1] for m, se, p in zip(est.mean, est.std_err, pde)))
    run.extra["experimental"] = True
    print(f"G(T) = {masses[-1]:.10g} (history columns hold u*m)")
    return 0


def cmd_diffusion_inverse(cfg: RunConfig, run: _Run) -> int:
    grid, mesh = cfg.build_grid(), cfg.build_mesh()
    problem = cfg.build_diffusion(grid, mesh, with_survival=True)
    try:
        res = iterate_diffusion(problem, mesh, cfg.inverse_config())
    except NonConvergence as exc:
        if exc.diagnostics is not None:
            write_diagnostics(run.path("diagnostics.csv"), exc.diagnostics)
        raise
    write_barrier(run.path("barrier.csv"), res.barrier)
    write_diagnostics(run.path("diagnostics.csv"), res.diagnostics)
    d = res.diagnostics
    run.residuals = {
        "iterations": d.iterations,
        "mass_residual": d.records[-1].mass_residual,
        "constraint_residual": d.records[-1].constraint_residual,
        "max_u_monotonicity_violation": d.max_u_violation,
        "max_b_monotonicity_violation": d.max_b_violation,
        "monotone_within_1e-10": bool(d.max_u_violation <= 1e-10 and d.max_b_violation <= 1e-10),
    }
    if cfg.survival.kind == "from_barrier":
        target = cfg.survival.barrier.build(mesh, cfg.base)
        run.residuals["barrier_error_sup"] = float(np.max(np.abs(res.barrier.values - target.values)))
    run.extra["experimental"] = True
    print(f"converged in {d.iterations} iterations (experimental)")
    return 0


def cmd_price(cfg: RunConfig, run: _Run) -> int:
    spec = cfg.build_pricing()
    surface = solve_price_surface(spec)
    p = cfg.pricing
    f = cfg.u0.build(spec.y_grid, cfg.base)
    write_matrix(run.path("price_surface.csv"), "x", spec.asset_nodes, spec.y_grid.nodes, surface.at(0.0))
    value = price(surface, 0.0, p.x0, f)
    header, row = ["x0", "price"], [p.x0, value]
    run.residuals = {"price": value}
    if p.mc_paths:
        pcfg = dataclasses.replace(cfg.path_config(), n_paths=p.mc_paths)
        m, se = mc_price(spec, p.x0, f, pcfg)
        tol, agree = _agree(abs(m - value), se, cfg.monte_carlo.pde_budget)
        header += ["mc_mean", "mc_std_err", "tolerance", "agree"]
        row += [m, se, tol, agree]
        run.residuals.update(mc_mean=m, mc_std_err=se, mc_agree=agree)
    write_rows(run.path("price.csv"), header, [row])
    print(f"price = {value:.10g}")
    return 0


COMMANDS: dict[str, tuple[Callable[[RunConfig, _Run], int], str]] = {
    "check-compat": (cmd_check_compat, "check compatibility of (G, u0, lam); exit 0 iff compatible"),
    "forward": (cmd_forward, "solve the killed heat equation for a given barrier"),
    "inverse": (cmd_inverse, "recover the barrier from G by monotone iteration"),
    "mc-verify": (cmd_mc_verify, "cross-check PDE survival (and densities) by Monte Carlo"),
    "diffusion-forward": (cmd_diffusion_forward, "forward solve for a general diffusion (experimental)"),
    "diffusion-inverse": (cmd_diffusion_inverse, "inverse iteration for a general diffusion (experimental)"),
    "price": (cmd_price, "price a claim on a GBM asset that dies with the credit index"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifptk", description="Inverse first-passage-time toolkit.",
                     epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=CSV_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="JSON run configuration (defaults if omitted)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="override the config thread count")
        p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    return parser


def _versions() -> dict:
    return {"ifptk": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pydantic": pydantic.VERSION}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, threads=args.threads)
    except (OSError, ValueError) as exc:  # pydantic.ValidationError and JSON errors are ValueErrors
        print(f"ifptk: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"ifptk: cannot create output directory: {exc}", file=sys.stderr)
        return 2
    run = _Run(out)
    command, _ = COMMANDS[args.command]
    status, message = "ok", None
    try:
        code = command(cfg, run)
    except NumericalFailure as exc:
        code, status, message = 1, "numerical_failure", f"{type(exc).__name__}: {exc}"
    except (DomainError, OSError) as exc:
        code, status, message = 2, "usage_error", f"{type(exc).__name__}: {exc}"
    if message:
        print(f"ifptk: {message}", file=sys.stderr)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "status": status,
        "exit_code": code,
        "message": message,
        "seed": cfg.seed,
        "config": cfg.manifest_dump(),
        "versions": _versions(),
        "residuals": run.residuals,
        "outputs": run.files,
        **run.extra,
    }
    write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
