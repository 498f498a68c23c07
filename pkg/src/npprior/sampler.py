"""Continuous latent samples from baseline priors and from binned densities.

Rows are generated in fixed chunks of ``CHUNK_ROWS``. Chunk ``k`` draws from a
PCG64 generator (period 2**128) seeded with ``SeedSequence(seed,
spawn_key=(k,))``, so a batch depends only on ``(prior, d, count, seed)`` and
not on how chunks are scheduled across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._parallel import thread_count
from .density import BinnedDensity
from .errors import IncompatibleBatches, InvalidParameter

CHUNK_ROWS = 4096


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise InvalidParameter(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class Uniform:
    min: float = 0.0
    max: float = 1.0
    tag = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max) and self.min < self.max):
            raise InvalidParameter(f"uniform requires finite min < max, got {self.min}, {self.max}")


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    sigma: float = 1.0
    tag = "normal"

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise InvalidParameter("normal mu must be finite")
        _positive("sigma", self.sigma)


@dataclass(frozen=True)
class Cauchy:
    x0: float = 0.0
    gamma_scale: float = 1.0
    tag = "cauchy"

    def __post_init__(self):
        if not math.isfinite(self.x0):
            raise InvalidParameter("cauchy x0 must be finite")
        _positive("gamma_scale", self.gamma_scale)


@dataclass(frozen=True)
class GammaRadial:
    """Uniform direction scaled by ``sqrt(r)``, ``r ~ Gamma(shape 1/2, scale theta)``.

    ``theta=None`` means ``2 * d`` at sampling time, which gives
    ``E||z||^2 = d`` like a standard normal prior.
    """

    theta: float | None = None
    tag = "gamma"

    def __post_init__(self):
        if self.theta is not None:
            _positive("theta", self.theta)

    def theta_for(self, d: int) -> float:
        return 2.0 * d if self.theta is None else float(self.theta)


@dataclass(frozen=True, eq=False)
class NonParametric:
    density: BinnedDensity
    tag = "nonparametric"

    def __post_init__(self):
        if not isinstance(self.density, BinnedDensity):
            raise InvalidParameter("NonParametric requires a BinnedDensity")


PriorSpec = Union[Uniform, Normal, Cauchy, GammaRadial, NonParametric]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    data: np.ndarray = field(repr=False)
    seed: int
    prior: PriorSpec | None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidParameter(f"batch data must be a non-empty 2-D array, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidParameter("batch data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(chunk,))))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed determined by ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _sphere_rows(rng: np.random.Generator, rows: int, d: int) -> np.ndarray:
    v = rng.standard_normal((rows, d))
    norms = np.linalg.norm(v, axis=1)
    bad = norms == 0
    while np.any(bad):
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms[bad] = np.linalg.norm(v[bad], axis=1)
        bad = norms == 0
    return v / norms[:, None]


def _binned_rows(rng: np.random.Generator, rows: int, d: int, density: BinnedDensity) -> np.ndarray:
    grid = density.grid
    cdf = np.cumsum(density.mass)
    u = rng.random((rows, d)) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), grid.n - 1)
    lower = grid.min + idx * grid.width
    x = lower + grid.width * rng.random((rows, d))
    # Keep jitter inside the half-open bin despite rounding.
    upper = grid.min + (idx + 1) * grid.width
    return np.minimum(x, np.nextafter(upper, lower))


def _draw_chunk(prior: PriorSpec | None, rng: np.random.Generator, rows: int, d: int) -> np.ndarray:
    if prior is None:
        return _sphere_rows(rng, rows, d)
    if isinstance(prior, Uniform):
        return prior.min + (prior.max - prior.min) * rng.random((rows, d))
    if isinstance(prior, Normal):
        return prior.mu + prior.sigma * rng.standard_normal((rows, d))
    if isinstance(prior, Cauchy):
        u = rng.random((rows, d))
        return prior.x0 + prior.gamma_scale * np.tan(np.pi * (u - 0.5))
    if isinstance(prior, GammaRadial):
        v = _sphere_rows(rng, rows, d)
        # Gamma(1/2, scale theta) equals (theta / 2) * Z^2 for standard normal Z.
        radius = np.abs(rng.standard_normal(rows)) * math.sqrt(prior.theta_for(d) / 2.0)
        return radius[:, None] * v
    if isinstance(prior, NonParametric):
        return _binned_rows(rng, rows, d, prior.density)
    raise InvalidParameter(f"unsupported prior {prior!r}")


def _check_shape(d, count):
    if int(d) != d or d < 1:
        raise InvalidParameter(f"d must be a positive integer, got {d}")
    if int(count) != count or count < 1:
        raise InvalidParameter(f"count must be a positive integer, got {count}")
    return int(d), int(count)


def _chunked(prior, d: int, count: int, seed: int) -> np.ndarray:
    if not 0 <= int(seed) < 2**64:
        raise InvalidParameter("seed must fit in an unsigned 64-bit integer")
    starts = list(range(0, count, CHUNK_ROWS))

    def work(k):
        rows = min(CHUNK_ROWS, count - starts[k])
        return _draw_chunk(prior, chunk_rng(seed, k), rows, d)

    workers = min(thread_count(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, range(len(starts))))
    else:
        parts = [work(k) for k in range(len(starts))]
    return np.concatenate(parts, axis=0)


def sample(prior: PriorSpec, d: int, count: int, seed: int) -> SampleBatch:
    if not isinstance(prior, (Uniform, Normal, Cauchy, GammaRadial, NonParametric)):
        raise InvalidParameter(f"not a prior specification: {prior!r}")
    d, count = _check_shape(d, count)
    return SampleBatch(_chunked(prior, d, count, seed), int(seed), prior)


def uniform_on_sphere(d: int, count: int, seed: int) -> SampleBatch:
    """Isotropic unit vectors; the returned batch has ``prior=None``."""
    d, count = _check_shape(d, count)
    return SampleBatch(_chunked(None, d, count, seed), int(seed), None)


def interpolate(a: SampleBatch, b: SampleBatch, lam: float) -> SampleBatch:
    if a.data.shape != b.data.shape:
        raise IncompatibleBatches(f"batch shapes differ: {a.data.shape} vs {b.data.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameter(f"lambda must lie in [0, 1], got {lam}")
    return SampleBatch((1.0 - lam) * a.data + lam * b.data, a.seed, a.prior)


def midpoints(a: SampleBatch, b: SampleBatch) -> SampleBatch:
    return interpolate(a, b, 0.5)
