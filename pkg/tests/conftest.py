import math
import time

import numpy as np
import pytest

from ifptk.domain import Barrier, DensityField, SpatialGrid, TimeMesh
from ifptk.forward import solve_forward
from ifptk.inverse import iterate
from ifptk.survival import SurvivalSpec

ACCEPTANCE_LINES: list[str] = []

ROUND_TRIP_CASES = {
    "zero": lambda t: np.zeros_like(t),
    "sine": lambda t: 0.3 * np.sin(2.0 * math.pi * t),
}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


@pytest.fixture(scope="session")
def std_grid():
    return SpatialGrid.with_spacing(-12.0, 12.0, 1e-2)


@pytest.fixture(scope="session")
def std_mesh():
    return TimeMesh(1.0, 1000)


@pytest.fixture(scope="session")
def normal_u0(std_grid):
    return DensityField.gaussian(std_grid)


@pytest.fixture(scope="session")
def coarse():
    """Small problem for fast unit tests."""
    grid = SpatialGrid.with_spacing(-10.0, 10.0, 4e-2)
    mesh = TimeMesh(1.0, 200)
    return grid, mesh, DensityField.gaussian(grid)


def round_trip(case: str, dx: float, n_steps: int):
    start = time.perf_counter()
    grid = SpatialGrid.with_spacing(-12.0, 12.0, dx)
    mesh = TimeMesh(1.0, n_steps)
    u0 = DensityField.gaussian(grid)
    b_true = Barrier.from_function(mesh, ROUND_TRIP_CASES[case])
    h = solve_forward(u0, b_true, mesh)
    G = SurvivalSpec.from_mesh_values(mesh, h.masses(), 1.0)
    result = iterate(u0, G, mesh)
    elapsed = time.perf_counter() - start
    return {"b_true": b_true, "forward": h, "G": G, "result": result, "u0": u0, "elapsed": elapsed}


@pytest.fixture(scope="session")
def round_trips():
    """Both round-trip cases at standard and halved resolution (computed once)."""
    cache: dict = {}

    def get(case: str, halved: bool = False):
        key = (case, halved)
        if key not in cache:
            cache[key] = round_trip(case, 5e-3 if halved else 1e-2, 2000 if halved else 1000)
        return cache[key]

    return get
