"""Quantitative mismatch checks: KL tables, norm-distribution overlap, chi-squared laws."""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._parallel import thread_count
from .density import DEFAULT_EPS, SUM_TOL, BinnedDensity, DivergenceKind, divergence, divergence_of
from .errors import InvalidParameter
from .interpolant import midpoint_density
from .sampler import Normal, PriorSpec, derive_seed, midpoints, sample

DEFAULT_BINS = 200


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        mass = np.asarray(self.mass, dtype=np.float64)
        if edges.ndim != 1 or mass.shape != (edges.size - 1,):
            raise InvalidParameter("histogram needs m+1 edges for m masses")
        if np.any(np.diff(edges) <= 0):
            raise InvalidParameter("histogram edges must be strictly increasing")
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > SUM_TOL:
            raise InvalidParameter("histogram mass must be nonnegative and sum to 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True)
class NormOverlapReport:
    d: int
    prior_hist: Histogram
    mid_hist: Histogram
    kl_prior_vs_mid: float
    overlap: float


def pooled_edges(a: np.ndarray, b: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width edges spanning the pooled range of two samples."""
    lo = float(min(a.min(), b.min()))
    hi = float(max(a.max(), b.max()))
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def histogram(values: np.ndarray, edges: np.ndarray) -> tuple[Histogram, np.ndarray]:
    """Normalized histogram and the raw counts behind it.

    Values equal to the last edge fall in the last bin. Values outside the
    edges are an error, since the edges are meant to span the data.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InvalidParameter("cannot histogram an empty sample")
    if values.min() < edges[0] or values.max() > edges[-1]:
        raise InvalidParameter("values fall outside the histogram edges")
    counts, _ = np.histogram(values, bins=edges)
    return Histogram(edges, counts / counts.sum()), counts


def overlap_coefficient(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.minimum(p, q).sum())


def mismatch_table(densities, eps: float = DEFAULT_EPS) -> list[tuple[str, float]]:
    """KL(P || midpoint(P)) for each ``(name, density)`` pair."""
    rows = []
    for name, dens in densities:
        if not isinstance(dens, BinnedDensity):
            raise InvalidParameter(f"{name!r} is not a binned density")
        rows.append((name, divergence(DivergenceKind.KL_PQ, dens, midpoint_density(dens), eps)))
    return rows


def norm_overlap(prior: PriorSpec, d: int, count: int = 50_000, bins: int = DEFAULT_BINS,
                 seed: int = 0, eps: float = DEFAULT_EPS) -> NormOverlapReport:
    """Compare Euclidean norms of prior draws with norms of midpoints of two fresh batches."""
    if int(d) != d or d < 1:
        raise InvalidParameter(f"d must be a positive integer, got {d}")
    if count < 1000:
        raise InvalidParameter(f"count must be at least 1000, got {count}")
    base = sample(prior, d, count, derive_seed(seed, 0))
    first = sample(prior, d, count, derive_seed(seed, 1))
    second = sample(prior, d, count, derive_seed(seed, 2))
    prior_norms = np.linalg.norm(base.data, axis=1)
    mid_norms = np.linalg.norm(midpoints(first, second).data, axis=1)

    edges = pooled_edges(prior_norms, mid_norms, bins)
    prior_hist, _ = histogram(prior_norms, edges)
    mid_hist, _ = histogram(mid_norms, edges)
    kl = divergence_of(DivergenceKind.KL_PQ, prior_hist.mass, mid_hist.mass, eps)
    return NormOverlapReport(
        d=int(d),
        prior_hist=prior_hist,
        mid_hist=mid_hist,
        kl_prior_vs_mid=max(kl, 0.0),
        overlap=min(1.0, overlap_coefficient(prior_hist.mass, mid_hist.mass)),
    )


def cell_seed(seed: int, tag: str, d: int) -> int:
    return derive_seed(seed, zlib.crc32(tag.encode()), d)


def norm_overlap_grid(prior: PriorSpec, dims, count: int = 50_000, bins: int = DEFAULT_BINS,
                      seed: int = 0) -> list[NormOverlapReport]:
    """One report per dimension; cells may run concurrently."""
    dims = [int(d) for d in dims]

    def cell(d):
        return norm_overlap(prior, d, count, bins, cell_seed(seed, prior.tag, d))

    workers = min(thread_count(), len(dims))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(cell, dims))
    return [cell(d) for d in dims]


def chi2_check(d: int, sigma: float = 1.0, count: int = 50_000, seed: int = 0):
    """Empirical squared-norm moments of a normal prior relative to chi-squared laws.

    Returns ``(mean_ratio, var_ratio, mid_mean_ratio)``; all three are 1 in
    expectation.
    """
    if count < 10_000:
        raise InvalidParameter(f"count must be at least 10000, got {count}")
    prior = Normal(0.0, sigma)
    sq = np.sum(sample(prior, d, count, derive_seed(seed, 0)).data ** 2, axis=1)
    a = sample(prior, d, count, derive_seed(seed, 1))
    b = sample(prior, d, count, derive_seed(seed, 2))
    mid_sq = np.sum(midpoints(a, b).data ** 2, axis=1)
    s2 = sigma * sigma
    return (
        float(sq.mean() / (d * s2)),
        float(sq.var(ddof=1) / (2.0 * d * s2 * s2)),
        float(mid_sq.mean() / (d * s2 / 2.0)),
    )


def chi2_pdf(x, d: int):
    """Chi-squared density with ``d`` degrees of freedom (scalar or array)."""
    if int(d) != d or d < 1:
        raise InvalidParameter(f"d must be a positive integer, got {d}")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0):
        raise InvalidParameter("chi-squared pdf is defined for x >= 0")
    k = d / 2.0
    log_norm = k * math.log(2.0) + math.lgamma(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp((k - 1.0) * np.log(arr) - arr / 2.0 - log_norm)
    zero = arr == 0
    if np.any(zero):
        at_zero = math.inf if d == 1 else (math.exp(-log_norm) if d == 2 else 0.0)
        out = np.where(zero, at_zero, out)
    return float(out) if np.ndim(x) == 0 else out
