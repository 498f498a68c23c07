"""Binned densities on a uniform grid.

A density is stored as a probability mass vector over ``n`` equal-width bins
covering ``[min, max)``. Bin ``i`` (0-indexed) has center
``min + (i + 0.5) * h`` with ``h = (max - min) / n``. Continuous pdfs are
discretized with the midpoint rule and renormalized.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleGrids, InvalidParameter

DEFAULT_EPS = 1e-12
SUM_TOL = 1e-9


class DivergenceKind(enum.Enum):
    KL_PQ = "kl_pq"
    KL_QP = "kl_qp"
    JEFFREYS_MID = "jeffreys_mid"
    L2 = "l2"

    @classmethod
    def parse(cls, text: str | DivergenceKind) -> DivergenceKind:
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        for kind in cls:
            if key in (kind.value, kind.name.lower()):
                return kind
        raise InvalidParameter(
            f"unknown divergence kind {text!r}; expected one of "
            + ", ".join(k.value for k in cls)
        )


@dataclass(frozen=True)
class GridSpec:
    min: float = 0.0
    max: float = 1.0
    n: int = 1024

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise InvalidParameter("grid bounds must be finite")
        if not self.min < self.max:
            raise InvalidParameter(f"grid requires min < max, got [{self.min}, {self.max}]")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParameter(f"grid requires an integer n >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def width(self) -> float:
        return (self.max - self.min) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.min + (np.arange(self.n) + 0.5) * self.width

    @property
    def edges(self) -> np.ndarray:
        return self.min + np.arange(self.n + 1) * self.width

    def bin_of(self, x: float) -> int:
        """Index of the bin containing ``x`` (clipped to the grid)."""
        k = int(math.floor((x - self.min) / self.width))
        return min(max(k, 0), self.n - 1)


@dataclass(frozen=True, eq=False)
class BinnedDensity:
    grid: GridSpec
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64)
        if mass.shape != (self.grid.n,):
            raise InvalidParameter(
                f"mass has shape {mass.shape}, expected ({self.grid.n},)"
            )
        if not np.all(np.isfinite(mass)):
            raise InvalidParameter("mass contains non-finite values")
        if np.any(mass < 0):
            raise InvalidParameter("mass contains negative entries")
        total = float(mass.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidParameter(f"mass sums to {total!r}, expected 1 within {SUM_TOL}")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_weights(cls, grid: GridSpec, weights) -> BinnedDensity:
        """Normalize nonnegative weights into a density."""
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (grid.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameter("weights must be finite, nonnegative and of length n")
        total = w.sum()
        if total <= 0:
            raise InvalidParameter("weights sum to zero")
        return cls(grid, w / total)

    @property
    def n(self) -> int:
        return self.grid.n

    def __eq__(self, other):
        if not isinstance(other, BinnedDensity):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.mass, other.mass)

    __hash__ = None


def _check_sigma(name: str, value: float):
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameter(f"{name} must be a positive finite number, got {value}")


def make_uniform(grid: GridSpec) -> BinnedDensity:
    return BinnedDensity(grid, np.full(grid.n, 1.0 / grid.n))


def make_delta(grid: GridSpec, index: int) -> BinnedDensity:
    if not 0 <= index < grid.n:
        raise InvalidParameter(f"delta bin {index} outside [0, {grid.n})")
    mass = np.zeros(grid.n)
    mass[index] = 1.0
    return BinnedDensity(grid, mass)


def make_truncated_normal(grid: GridSpec, mu: float, sigma: float) -> BinnedDensity:
    """Normal(mu, sigma^2) restricted to the grid, midpoint-rule discretized.

    When sigma is so small that every bin center underflows, all mass goes
    to the bin containing ``mu``.
    """
    _check_sigma("sigma", sigma)
    with np.errstate(over="ignore", invalid="ignore"):
        z = (grid.centers - mu) / sigma
        logw = -0.5 * z * z
        w = np.exp(logw - logw.max())
    if not np.isfinite(w).all() or w.sum() == 0:
        return make_delta(grid, grid.bin_of(mu))
    return BinnedDensity.from_weights(grid, w)


def make_truncated_cauchy(grid: GridSpec, x0: float, gamma_scale: float) -> BinnedDensity:
    _check_sigma("gamma_scale", gamma_scale)
    z = (grid.centers - x0) / gamma_scale
    return BinnedDensity.from_weights(grid, 1.0 / (1.0 + z * z))


def mean(d: BinnedDensity) -> float:
    return float(d.mass @ d.grid.centers)


def variance(d: BinnedDensity) -> float:
    c = d.grid.centers
    m = float(d.mass @ c)
    # Centered second moment; avoids cancellation of E[x^2] - m^2.
    return float(d.mass @ (c - m) ** 2)


def index_variance(d: BinnedDensity) -> float:
    """Variance constraint term in bin-index units, indices running 1..n.

    Returns ``(1/n) * (sum i^2 p_i - (sum i p_i)^2)``.
    """
    return index_variance_of(d.mass)


def index_variance_of(mass: np.ndarray) -> float:
    n = mass.shape[0]
    i = np.arange(1, n + 1, dtype=np.float64)
    m = float(mass @ i)
    return float(mass @ (i - m) ** 2) / n


def max_index_variance(n: int) -> float:
    """Largest attainable index variance: half the mass on each end bin."""
    return (n - 1) ** 2 / (4.0 * n)


def _xlogy_ratio(x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """Elementwise x * log(x / max(y, eps)) with 0 * log 0 = 0."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * (np.log(x[pos]) - np.log(np.maximum(y[pos], eps)))
    return out


def divergence_of(kind: DivergenceKind, p: np.ndarray, q: np.ndarray,
                  eps: float = DEFAULT_EPS) -> float:
    """Divergence between two mass vectors, in nats (L2 is unitless)."""
    kind = DivergenceKind.parse(kind)
    if kind is DivergenceKind.KL_PQ:
        return float(_xlogy_ratio(p, q, eps).sum())
    if kind is DivergenceKind.KL_QP:
        return float(_xlogy_ratio(q, p, eps).sum())
    if kind is DivergenceKind.JEFFREYS_MID:
        m = 0.5 * (p + q)
        return float(_xlogy_ratio(p, m, eps).sum() + _xlogy_ratio(q, m, eps).sum())
    diff = p - q
    return float(diff @ diff)


def divergence(kind: DivergenceKind, P: BinnedDensity, Q: BinnedDensity,
               eps: float = DEFAULT_EPS) -> float:
    if P.grid != Q.grid:
        raise IncompatibleGrids(f"grids differ: {P.grid} vs {Q.grid}")
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    return divergence_of(kind, P.mass, Q.mass, eps)
