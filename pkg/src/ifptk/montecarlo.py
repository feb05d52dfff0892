"""Path-simulation oracle for killed Brownian motion.

Survival is estimated as ``E[exp(-lam * A_t)]`` where ``A_t`` is the time spent
below the barrier, accumulated per simulation step with the indicator taken at
the midpoint state against the barrier at the midpoint time.  The density
estimator runs the same paths from a fixed ``x`` against the time-reversed
barrier and weights by ``u0(x + B_t)``.

Randomness: paths are grouped in fixed-size blocks and block ``i`` draws from
``Philox(SeedSequence([seed, i]))``, so estimates depend only on ``(seed,
config)`` and never on the thread count.  Block results are merged in block
order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np

from .domain import Barrier, DensityField, cumulative_mass, invert_cumulative
from .errors import DomainError

__all__ = [
    "PathConfig",
    "SurvivalEstimate",
    "inverse_cdf_sampler",
    "simulate_survival",
    "feynman_kac_density",
    "hazard_estimate",
    "block_rng",
    "block_sizes",
    "merge_moments",
]

Sampler = Callable[[np.random.Generator, int], np.ndarray]
_STEP_CHUNK = 64


@dataclass(frozen=True)
class PathConfig:
    n_paths: int
    dt_sim: float = 1e-3
    seed: int = 0
    antithetic: bool = True
    # "expectation" averages exp(-lam A_t); "exponential_clock" draws U ~ Exp(1)
    # per path and counts survivors with lam A_t < U
    estimator: str = "expectation"
    block_size: int = 1 << 15
    threads: int = 1

    def __post_init__(self) -> None:
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise DomainError("n_paths must be an integer >= 1")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("antithetic sampling needs an even n_paths")
        if not (math.isfinite(self.dt_sim) and self.dt_sim > 0):
            raise DomainError("dt_sim must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.estimator not in ("expectation", "exponential_clock"):
            raise DomainError(f"unknown estimator {self.estimator!r}")
        if self.block_size < 2 or self.block_size % 2:
            raise DomainError("block_size must be even and >= 2")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")

    def steps_to(self, t: float) -> int:
        n = round(t / self.dt_sim)
        if abs(n * self.dt_sim - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"dt_sim={self.dt_sim} does not divide t={t}")
        return int(n)


class SurvivalEstimate(NamedTuple):
    times: np.ndarray
    mean: np.ndarray
    std_err: np.ndarray
    n_effective: int


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def block_sizes(n_samples: int, per_block: int) -> list[int]:
    full, rest = divmod(int(n_samples), int(per_block))
    return [per_block] * full + ([rest] if rest else [])


def inverse_cdf_sampler(u0: DensityField) -> Sampler:
    """Draw from the normalized piecewise-linear density ``u0``."""
    cum = cumulative_mass(u0.values, u0.grid.dx)
    if not cum[-1] > 0:
        raise DomainError("cannot sample from a zero density")

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return invert_cumulative(u0.values, cum, u0.grid, rng.random(n) * cum[-1])

    return draw


class _Moments(NamedTuple):
    """Shifted sums: ``s1 = sum(w - ref)``, ``s2 = sum((w - ref)**2)`` per column."""

    n: int
    s1: np.ndarray
    s2: np.ndarray


def merge_moments(parts: list[_Moments], ref: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean and standard error from per-block shifted sums, combined in list order.

    Shifting by a reference sample keeps identical samples exact: the mean is
    then ``ref`` itself and the standard error is exactly zero.
    """
    n = 0
    s1 = np.zeros_like(ref)
    s2 = np.zeros_like(ref)
    for p in parts:
        n += p.n
        s1 = s1 + p.s1
        s2 = s2 + p.s2
    mean = ref + s1 / n
    if n > 1:
        var = np.maximum(s2 - s1 * s1 / n, 0.0) / (n - 1)
    else:
        var = np.zeros_like(ref)
    return mean, np.sqrt(var / n), n


def _occupation(rng: np.random.Generator, x0: np.ndarray, dt: float, b_mid: np.ndarray,
                record: np.ndarray, antithetic: bool):
    """Occupation step counts at the step indices ``record``, plus final positions.

    Returns ``(counts, finals)`` with one entry per leg (two when antithetic,
    the second driven by negated increments); ``counts[leg]`` has shape
    ``(len(record), n)``.
    """
    n = x0.size
    signs = (1.0, -1.0) if antithetic else (1.0,)
    sq = math.sqrt(dt)
    w = np.zeros(n)
    running = [np.zeros(n, dtype=np.int64) for _ in signs]
    counts = [np.zeros((record.size, n), dtype=np.int64) for _ in signs]
    n_steps = b_mid.size
    for start in range(0, n_steps, _STEP_CHUNK):
        stop = min(start + _STEP_CHUNK, n_steps)
        path = np.empty((stop - start + 1, n))
        path[0] = w
        np.cumsum(rng.standard_normal((stop - start, n)) * sq, axis=0, out=path[1:])
        path[1:] += w
        mid = 0.5 * (path[1:] + path[:-1])
        bm = b_mid[start:stop, None]
        hits = np.nonzero((record > start) & (record <= stop))[0]
        for leg, sign in enumerate(signs):
            below = (x0 + sign * mid) <= bm
            cum = np.cumsum(below, axis=0, dtype=np.int64)
            cum += running[leg]
            for slot in hits:
                counts[leg][slot] = cum[record[slot] - start - 1]
            running[leg] = cum[-1]
        w = path[-1].copy()
    return counts, [x0 + sign * w for sign in signs]


def _run(cfg: PathConfig, job: Callable[[np.random.Generator, int], np.ndarray]):
    """Evaluate ``job`` on every block and return ``(mean, std_err, n_effective)``.

    ``job(rng, n)`` returns an ``(n_report, n)`` array of independent samples.
    """
    per_block = cfg.block_size // 2 if cfg.antithetic else cfg.block_size
    total = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
    sizes = block_sizes(total, per_block)

    def work(i: int):
        return job(block_rng(cfg.seed, i), sizes[i])

    first = work(0)
    ref = first[:, 0].copy()

    def reduce(samples: np.ndarray) -> _Moments:
        d = samples - ref[:, None]
        return _Moments(samples.shape[1], d.sum(axis=1), (d * d).sum(axis=1))

    parts = [reduce(first)]
    rest = range(1, len(sizes))
    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts.extend(pool.map(lambda i: reduce(work(i)), rest))
    else:
        parts.extend(reduce(work(i)) for i in rest)
    return merge_moments(parts, ref)


def _barrier_at(b: Barrier, t: np.ndarray) -> np.ndarray:
    return np.asarray(b.at(np.clip(t, 0.0, b.mesh.horizon)), dtype=float)


def _weights(counts: np.ndarray, lam: float, dt: float, cfg: PathConfig,
             rng: np.random.Generator) -> np.ndarray:
    exposure = lam * dt * counts
    if cfg.estimator == "expectation":
        return np.exp(-exposure)
    clock = rng.exponential(size=counts.shape[1])
    return (exposure < clock).astype(float)


def simulate_survival(f_sampler: Union[Sampler, DensityField], b: Barrier, lam: float,
                      report_times, cfg: PathConfig) -> SurvivalEstimate:
    """Monte-Carlo survival ``P(tau > t)`` at each report time.

    ``f_sampler`` is either a callable ``(rng, n) -> positions`` or a density
    field sampled by inverse CDF.
    """
    times = np.atleast_1d(np.asarray(report_times, dtype=float))
    if times.size == 0:
        raise DomainError("report_times is empty")
    if not (math.isfinite(lam) and lam > 0):
        raise DomainError("lam must be positive")
    horizon = b.mesh.horizon
    if np.any(times < 0) or np.any(times > horizon * (1 + 1e-12)):
        raise DomainError(f"report times must lie in [0, {horizon}]")
    record = np.array([cfg.steps_to(t) for t in times], dtype=np.int64)
    dt = cfg.dt_sim
    n_steps = int(record.max())
    b_mid = _barrier_at(b, (np.arange(n_steps) + 0.5) * dt)
    sampler = inverse_cdf_sampler(f_sampler) if isinstance(f_sampler, DensityField) else f_sampler

    def job(rng: np.random.Generator, n: int) -> np.ndarray:
        x0 = np.asarray(sampler(rng, n), dtype=float)
        counts, _ = _occupation(rng, x0, dt, b_mid, record, cfg.antithetic)
        legs = [_weights(c, lam, dt, cfg, rng) for c in counts]
        return legs[0] if len(legs) == 1 else 0.5 * (legs[0] + legs[1])

    mean, se, n_eff = _run(cfg, job)
    return SurvivalEstimate(times, mean, se, n_eff)


def feynman_kac_density(x: float, t: float, u0: DensityField, b: Barrier, lam: float,
                        cfg: PathConfig) -> tuple[float, float]:
    """Estimate ``u(t, x)`` by the killed-path representation; returns ``(mean, std_err)``.

    Paths start at ``x``; the step at forward time ``s`` is tested against
    ``b(t - s)`` and each path is weighted by ``u0`` at its endpoint.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if t > b.mesh.horizon * (1 + 1e-12):
        raise DomainError(f"t exceeds the barrier horizon {b.mesh.horizon}")
    n_steps = cfg.steps_to(t)
    dt = cfg.dt_sim
    b_rev = _barrier_at(b, t - (np.arange(n_steps) + 0.5) * dt)
    record = np.array([n_steps], dtype=np.int64)

    def job(rng: np.random.Generator, n: int) -> np.ndarray:
        x0 = np.full(n, float(x))
        counts, finals = _occupation(rng, x0, dt, b_rev, record, cfg.antithetic)
        legs = [_weights(c, lam, dt, cfg, rng) * u0(xf)[None, :] for c, xf in zip(counts, finals)]
        return legs[0] if len(legs) == 1 else 0.5 * (legs[0] + legs[1])

    mean, se, _ = _run(cfg, job)
    return float(mean[0]), float(se[0])


def hazard_estimate(est: SurvivalEstimate, j: int) -> float:
    """Central-difference hazard ``-(G_{j+1} - G_{j-1}) / (t_{j+1} - t_{j-1}) / G_j``."""
    if not 1 <= j <= len(est.times) - 2:
        raise DomainError("hazard needs an interior report index")
    m = est.mean
    if not m[j] > 0:
        raise DomainError("hazard undefined where the survival estimate is 0")
    return float(-(m[j + 1] - m[j - 1]) / (est.times[j + 1] - est.times[j - 1]) / m[j])
