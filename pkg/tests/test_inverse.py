import math

import numpy as np
import pytest

from ifptk.domain import Barrier, DensityField, DensityHistory, SpatialGrid, TimeMesh
from ifptk.errors import CompatibilityViolation, DomainError, NonConvergence
from ifptk.forward import ForwardConfig, solve_forward
from ifptk.inverse import (
    InverseConfig,
    IterationRecord,
    barrier_from_constraint,
    consistency_report,
    iterate,
    l1_contraction_check,
)
from ifptk.survival import SurvivalSpec


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@pytest.fixture(scope="module")
def small():
    grid = SpatialGrid.with_spacing(-10.0, 10.0, 0.04)
    mesh = TimeMesh(1.0, 200)
    u0 = DensityField.gaussian(grid)
    b_true = Barrier.from_function(mesh, lambda t: 0.3 * np.sin(2 * np.pi * t))
    G = SurvivalSpec.from_mesh_values(mesh, solve_forward(u0, b_true, mesh).masses())
    return grid, mesh, u0, b_true, G


class TestBarrierFromConstraint:
    def test_gaussian_median(self):
        u = DensityField.gaussian(SpatialGrid(-10.0, 10.0, 2001))
        assert abs(barrier_from_constraint(u, -0.5, 1.0)) < 1e-10

    def test_uniform(self):
        u = DensityField(SpatialGrid(0.0, 1.0, 11), np.ones(11))
        assert barrier_from_constraint(u, -0.25, 1.0) == pytest.approx(0.25, abs=1e-14)

    def test_gaussian_quantile(self):
        u = DensityField.gaussian(SpatialGrid(-10.0, 10.0, 2001))
        assert abs(barrier_from_constraint(u, -normal_cdf(-1.0), 1.0) + 1.0) < 1e-4
        assert abs(barrier_from_constraint(u, -0.158655, 1.0) + 1.0) < 1e-4

    def test_lambda_scales_target(self):
        u = DensityField.gaussian(SpatialGrid(-10.0, 10.0, 2001))
        assert abs(barrier_from_constraint(u, -1.0, 2.0)) < 1e-10

    @pytest.mark.parametrize("gprime", [0.0, 0.1, -1.5])
    def test_out_of_range(self, gprime):
        u = DensityField.gaussian(SpatialGrid(-10.0, 10.0, 2001))
        with pytest.raises((DomainError, CompatibilityViolation)):
            barrier_from_constraint(u, gprime, 1.0)


class TestIterate:
    def test_recovers_barrier(self, small):
        grid, mesh, u0, b_true, G = small
        r = iterate(u0, G, mesh)
        assert np.max(np.abs(r.barrier.values - b_true.values)) < 2e-3
        assert r.diagnostics.converged
        assert r.diagnostics.iterations <= 50

    def test_monotone_iterates(self, small):
        grid, mesh, u0, _, G = small
        d = iterate(u0, G, mesh).diagnostics
        assert d.max_u_violation <= 1e-10
        assert d.max_b_violation <= 1e-10
        assert d.records[-1].barrier_change < 1e-6

    def test_constraint_holds_exactly(self, small):
        grid, mesh, u0, _, G = small
        r = iterate(u0, G, mesh)
        assert consistency_report(r.history, r.barrier, G).constraint_residual <= 1e-12

    def test_deterministic(self, small):
        grid, mesh, u0, _, G = small
        a, b = iterate(u0, G, mesh), iterate(u0, G, mesh)
        assert l1_contraction_check(a.history, b.history) == 0.0
        np.testing.assert_array_equal(a.barrier.values, b.barrier.values)

    def test_tolerance_insensitive(self, small):
        grid, mesh, u0, _, G = small
        loose = iterate(u0, G, mesh, InverseConfig(barrier_tol=1e-6))
        tight = iterate(u0, G, mesh, InverseConfig(barrier_tol=1e-8))
        assert l1_contraction_check(loose.history, tight.history) <= 1e-4
        assert np.max(np.abs(loose.barrier.values - tight.barrier.values)) <= 1e-4

    def test_scheme_difference_first_order(self):
        grid = SpatialGrid.with_spacing(-10.0, 10.0, 0.04)
        u0 = DensityField.gaussian(grid)
        diffs = []
        for n in (100, 200, 400):
            mesh = TimeMesh(1.0, n)
            G = SurvivalSpec.from_mesh_values(mesh, solve_forward(u0, Barrier.constant(mesh, 0.0), mesh).masses())
            cn = iterate(u0, G, mesh)
            ie = iterate(u0, G, mesh, InverseConfig(forward=ForwardConfig("implicit_euler")))
            diffs.append(l1_contraction_check(cn.history, ie.history))
        assert diffs[0] <= 1.0 / 100
        assert diffs[0] / diffs[1] > 1.8 and diffs[1] / diffs[2] > 1.8

    def test_uniform_killing_survival_rejected(self, small):
        grid, mesh, u0, _, _ = small
        G = SurvivalSpec.exponential(1.0, lam=1.0)
        with pytest.raises(CompatibilityViolation):
            iterate(u0, G, mesh)

    def test_excessive_hazard_rejected_with_time(self, small):
        grid, mesh, u0, _, _ = small
        with pytest.raises(CompatibilityViolation) as exc:
            iterate(u0, SurvivalSpec.exponential(2.0), mesh)
        assert exc.value.time == 0.0

    def test_nonconvergence_carries_diagnostics(self, small):
        grid, mesh, u0, _, G = small
        with pytest.raises(NonConvergence) as exc:
            iterate(u0, G, mesh, InverseConfig(max_iterations=2))
        d = exc.value.diagnostics
        assert not d.converged and len(d.records) == 2

    def test_record_row_matches_fields(self, small):
        grid, mesh, u0, _, G = small
        rec = iterate(u0, G, mesh).diagnostics.records[0]
        assert isinstance(rec, IterationRecord)
        assert len(rec.row()) == len(IterationRecord.FIELDS)


class TestConsistency:
    def test_heat_case_mass(self, coarse):
        grid, mesh, u0 = coarse
        b = Barrier.constant(mesh, -math.inf)
        h = solve_forward(u0, b, mesh)
        G = SurvivalSpec.from_mesh_values(mesh, np.ones(mesh.n_steps + 1))
        r = consistency_report(h, b, G)
        assert r.mass_residual <= 1e-8
        assert r.constraint_residual <= 1e-12

    def test_zero_history(self, coarse):
        grid, mesh, _ = coarse
        h = DensityHistory(mesh, grid, np.zeros((mesh.n_steps + 1, grid.n_nodes)))
        G = SurvivalSpec.exponential(0.5)
        r = consistency_report(h, Barrier.constant(mesh, 0.0), G)
        assert r.constraint_residual == pytest.approx(0.5, rel=1e-15)

    def test_as_dict(self, coarse):
        grid, mesh, u0 = coarse
        b = Barrier.constant(mesh, 0.0)
        h = solve_forward(u0, b, mesh)
        G = SurvivalSpec.from_mesh_values(mesh, h.masses())
        d = consistency_report(h, b, G).as_dict()
        assert set(d) == {"mass_residual", "constraint_residual", "integrated_residual"}
        assert d["mass_residual"] == 0.0

    def test_standard_round_trip_residuals(self, round_trips):
        rt = round_trips("zero")
        r = consistency_report(rt["result"].history, rt["result"].barrier, rt["G"])
        assert max(r.as_dict().values()) <= 5e-3


class TestContractionCheck:
    def test_requires_same_start(self, coarse):
        grid, mesh, u0 = coarse
        b = Barrier.constant(mesh, 0.0)
        other = DensityField.gaussian(grid, 0.1)
        with pytest.raises(DomainError):
            l1_contraction_check(solve_forward(u0, b), solve_forward(other, b))

    def test_requires_same_mesh(self, coarse):
        grid, mesh, u0 = coarse
        m2 = TimeMesh(1.0, 100)
        with pytest.raises(DomainError):
            l1_contraction_check(solve_forward(u0, Barrier.constant(mesh, 0.0)),
                                 solve_forward(u0, Barrier.constant(m2, 0.0)))

    def test_barrier_perturbation_bounded(self, coarse):
        grid, mesh, u0 = coarse
        a = solve_forward(u0, Barrier.constant(mesh, 0.0))
        b = solve_forward(u0, Barrier.constant(mesh, 0.05))
        d = l1_contraction_check(a, b)
        assert 0.0 < d <= 0.05
