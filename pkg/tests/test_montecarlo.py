import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from ifptk.domain import Barrier, DensityField, SpatialGrid, TimeMesh
from ifptk.errors import DomainError
from ifptk.forward import solve_forward
from ifptk.montecarlo import (
    PathConfig,
    _Moments,
    block_rng,
    block_sizes,
    feynman_kac_density,
    hazard_estimate,
    inverse_cdf_sampler,
    merge_moments,
    simulate_survival,
)

TIMES = [0.25, 0.5, 1.0]


@pytest.fixture(scope="module")
def setup():
    grid = SpatialGrid.with_spacing(-12.0, 12.0, 1e-2)
    mesh = TimeMesh(1.0, 1000)
    return grid, mesh, DensityField.gaussian(grid)


class TestPathConfig:
    def test_odd_antithetic(self):
        with pytest.raises(DomainError):
            PathConfig(n_paths=11)

    def test_odd_plain_ok(self):
        assert PathConfig(n_paths=11, antithetic=False).n_paths == 11

    @pytest.mark.parametrize("kw", [dict(dt_sim=0.0), dict(seed=-1), dict(estimator="bogus"), dict(threads=0)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            PathConfig(n_paths=10, **kw)

    def test_steps_must_divide(self):
        cfg = PathConfig(n_paths=10, dt_sim=0.3)
        assert cfg.steps_to(0.9) == 3
        with pytest.raises(DomainError):
            cfg.steps_to(1.0)


class TestStreams:
    def test_blocks_are_independent_streams(self):
        a = block_rng(7, 0).random(4)
        np.testing.assert_array_equal(a, block_rng(7, 0).random(4))
        assert not np.array_equal(a, block_rng(7, 1).random(4))
        assert not np.array_equal(a, block_rng(8, 0).random(4))

    def test_block_sizes(self):
        assert block_sizes(10, 4) == [4, 4, 2]
        assert block_sizes(8, 4) == [4, 4]

    def test_identical_samples_have_zero_error(self):
        ref = np.array([0.3, 0.7])
        parts = [_Moments(5, np.zeros(2), np.zeros(2)), _Moments(3, np.zeros(2), np.zeros(2))]
        mean, se, n = merge_moments(parts, ref)
        np.testing.assert_array_equal(mean, ref)
        np.testing.assert_array_equal(se, 0.0)
        assert n == 8

    def test_sampler_draws_the_density(self):
        g = SpatialGrid.with_spacing(-10.0, 10.0, 1e-2)
        draw = inverse_cdf_sampler(DensityField.gaussian(g, 1.0, 0.5))
        x = draw(np.random.default_rng(0), 20000)
        assert stats.kstest(x, "norm", args=(1.0, 0.5)).pvalue > 1e-3

    def test_sampler_rejects_zero(self):
        with pytest.raises(DomainError):
            inverse_cdf_sampler(DensityField.zeros(SpatialGrid(0.0, 1.0, 5)))


class TestSurvival:
    def test_no_killing(self, setup):
        grid, mesh, u0 = setup
        est = simulate_survival(u0, Barrier.constant(mesh, -math.inf), 1.0, TIMES, PathConfig(2000))
        np.testing.assert_array_equal(est.mean, 1.0)
        np.testing.assert_array_equal(est.std_err, 0.0)

    def test_killing_everywhere(self, setup):
        grid, mesh, u0 = setup
        est = simulate_survival(u0, Barrier.constant(mesh, math.inf), 1.0, TIMES, PathConfig(2000))
        np.testing.assert_allclose(est.mean, np.exp(-np.array(TIMES)), rtol=1e-12)
        np.testing.assert_array_equal(est.std_err, 0.0)

    def test_exponential_clock_is_unbiased(self, setup):
        grid, mesh, u0 = setup
        cfg = PathConfig(20000, estimator="exponential_clock", antithetic=False)
        est = simulate_survival(u0, Barrier.constant(mesh, math.inf), 1.0, TIMES, cfg)
        assert np.all(est.std_err > 0)
        assert np.all(np.abs(est.mean - np.exp(-np.array(TIMES))) < 4 * est.std_err)

    def test_antithetic_error_uses_pairs(self, setup):
        grid, mesh, u0 = setup
        est = simulate_survival(u0, Barrier.constant(mesh, 0.0), 1.0, TIMES, PathConfig(4000, dt_sim=1e-2))
        assert est.n_effective == 2000

    def test_agrees_with_pde(self, setup):
        grid, mesh, u0 = setup
        b = Barrier.constant(mesh, 0.0)
        est = simulate_survival(u0, b, 1.0, TIMES, PathConfig(40000, seed=11))
        pde = solve_forward(u0, b, mesh).masses()[[mesh.index_of(t) for t in TIMES]]
        assert np.all(np.abs(est.mean - pde) <= 3 * (est.std_err + 5e-3))

    def test_thread_count_does_not_change_bits(self, setup):
        grid, mesh, u0 = setup
        b = Barrier.from_function(mesh, lambda t: 0.2 * t)
        cfg = PathConfig(6000, dt_sim=1e-2, seed=5, block_size=1000)
        one = simulate_survival(u0, b, 1.0, TIMES, cfg)
        three = simulate_survival(u0, b, 1.0, TIMES, dataclasses.replace(cfg, threads=3))
        np.testing.assert_array_equal(one.mean, three.mean)
        np.testing.assert_array_equal(one.std_err, three.std_err)

    def test_seed_changes_result(self, setup):
        grid, mesh, u0 = setup
        b = Barrier.constant(mesh, 0.0)
        a = simulate_survival(u0, b, 1.0, [1.0], PathConfig(2000, dt_sim=1e-2, seed=1))
        c = simulate_survival(u0, b, 1.0, [1.0], PathConfig(2000, dt_sim=1e-2, seed=2))
        assert a.mean[0] != c.mean[0]

    def test_sampler_callable(self, setup):
        grid, mesh, _ = setup
        point = lambda rng, n: np.full(n, 5.0)
        est = simulate_survival(point, Barrier.constant(mesh, -1.0), 1.0, [1.0], PathConfig(2000, dt_sim=1e-2))
        assert est.mean[0] > 0.999

    @pytest.mark.parametrize("times", [[], [1.5], [-0.1]])
    def test_bad_report_times(self, setup, times):
        grid, mesh, u0 = setup
        with pytest.raises(DomainError):
            simulate_survival(u0, Barrier.constant(mesh, 0.0), 1.0, times, PathConfig(10))


class TestDensity:
    def test_heat_kernel(self, setup):
        grid, mesh, u0 = setup
        mean, se = feynman_kac_density(0.0, 1.0, u0, Barrier.constant(mesh, -math.inf), 1.0, PathConfig(40000))
        assert abs(mean - 1.0 / math.sqrt(4.0 * math.pi)) <= 3 * se

    def test_uniform_damping(self, setup):
        grid, mesh, u0 = setup
        cfg = PathConfig(4000, dt_sim=1e-2, seed=9)
        free, _ = feynman_kac_density(0.0, 1.0, u0, Barrier.constant(mesh, -math.inf), 1.0, cfg)
        killed, _ = feynman_kac_density(0.0, 1.0, u0, Barrier.constant(mesh, math.inf), 1.0, cfg)
        assert killed == pytest.approx(math.exp(-1.0) * free, rel=1e-12)

    def test_matches_pde_snapshot(self, setup):
        grid, mesh, u0 = setup
        b = Barrier.from_function(mesh, lambda t: 0.3 * np.sin(2 * np.pi * t))
        snap = solve_forward(u0, b, mesh).snapshot(mesh.index_of(0.5))
        mean, se = feynman_kac_density(0.5, 0.5, u0, b, 1.0, PathConfig(40000, seed=3))
        assert abs(mean - snap(0.5)) <= 3 * (se + 5e-3)

    def test_requires_positive_time(self, setup):
        grid, mesh, u0 = setup
        with pytest.raises(DomainError):
            feynman_kac_density(0.0, 0.0, u0, Barrier.constant(mesh, 0.0), 1.0, PathConfig(10))


class TestHazard:
    def _est(self, setup, b0, n=4000):
        grid, mesh, u0 = setup
        times = np.linspace(0.1, 1.0, 10)
        return simulate_survival(u0, Barrier.constant(mesh, b0), 1.0, times, PathConfig(n, dt_sim=1e-2))

    def test_uniform(self, setup):
        est = self._est(setup, math.inf)
        assert hazard_estimate(est, 4) == pytest.approx(1.0, abs=1e-2)

    def test_none(self, setup):
        assert hazard_estimate(self._est(setup, -math.inf), 4) == 0.0

    def test_bounded_by_rate(self, setup):
        est = self._est(setup, 0.0, n=40000)
        for j in range(1, 9):
            h = hazard_estimate(est, j)
            slack = 3 * (est.std_err[j - 1] + est.std_err[j + 1]) / (0.2 * est.mean[j])
            assert -slack < h < 1.0 + slack

    def test_endpoints_rejected(self, setup):
        with pytest.raises(DomainError):
            hazard_estimate(self._est(setup, 0.0, n=10), 0)
