"""Size-distribution statistics: histograms, JS divergence, and ICDF mapping."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

_MASS_TOL = 1e-9


@dataclass(frozen=True)
class SizeDistribution:
    """Normalized histogram over instance sizes.

    bin_edges has k+1 strictly increasing entries; masses has k nonnegative
    entries summing to 1 within 1e-9.
    """

    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        masses = np.asarray(self.masses, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("bin_edges must be a 1-D array of at least two edges")
        if masses.ndim != 1 or masses.size != edges.size - 1:
            raise ValueError(f"expected {edges.size - 1} masses for {edges.size} edges, got {masses.size}")
        if not np.isfinite(edges).all() or not (np.diff(edges) > 0).all():
            raise ValueError("bin_edges must be finite and strictly increasing")
        if not np.isfinite(masses).all() or (masses < 0).any():
            raise ValueError("masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > _MASS_TOL:
            raise ValueError(f"masses must sum to 1 within {_MASS_TOL}, got {masses.sum()!r}")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "masses", masses)

    @property
    def k(self) -> int:
        return self.masses.size


def build_histogram(values, k: int, value_range: tuple[float, float] | None = None) -> SizeDistribution:
    """Equal-width normalized histogram with k bins.

    Values exactly on an interior edge fall into the right bin.  When
    ``value_range`` is given, values outside it are clipped into the boundary
    bins so the masses still sum to 1.  An omitted range defaults to
    [min, max] of the values, widened to value±0.5 if all values coincide.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot build a histogram from zero values")
    if not np.isfinite(values).all():
        raise ValueError("histogram values must be finite")
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    if value_range is not None:
        lo, hi = float(value_range[0]), float(value_range[1])
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ValueError(f"invalid histogram range [{lo}, {hi}]")
    else:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=k, range=(lo, hi))
    return SizeDistribution(edges, counts / values.size)


def js_divergence_masses(p, q) -> float:
    """Jensen-Shannon divergence (base 2, range [0, 1]) between mass vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"mass vectors differ in shape: {p.shape} vs {q.shape}")
    m = (p + q) / 2
    left = p > 0
    right = q > 0
    js = 0.5 * np.sum(p[left] * np.log2(p[left] / m[left]))
    js += 0.5 * np.sum(q[right] * np.log2(q[right] / m[right]))
    return float(min(max(js, 0.0), 1.0))


def js_divergence(p: SizeDistribution, q: SizeDistribution) -> float:
    """JS divergence between two histograms sharing the same bin edges."""
    if p.bin_edges.size != q.bin_edges.size or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ValueError("histograms must share identical bin edges")
    return js_divergence_masses(p.masses, q.masses)


class EmpiricalCDF:
    """Mid-rank empirical CDF of a finite sample.

    cdf() counts half of the ties at a query point, so a value seen j times
    out of n maps near (rank + j/2) / n; icdf() linearly interpolates between
    the mid-rank plotting positions (i + 0.5) / n.  The two compose to the
    identity on distinct sample points.
    """

    def __init__(self, samples):
        values = np.sort(np.asarray(samples, dtype=np.float64).ravel())
        if values.size == 0:
            raise ValueError("empirical CDF needs at least one sample")
        if not np.isfinite(values).all():
            raise ValueError("samples must be finite")
        self.values = values
        self.cumulative = np.arange(1, values.size + 1) / values.size
        self._positions = (np.arange(values.size) + 0.5) / values.size

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalCDF":
        return cls(samples)

    @property
    def is_degenerate(self) -> bool:
        return bool(self.values[0] == self.values[-1])

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        n = self.values.size
        left = np.searchsorted(self.values, x, side="left")
        right = np.searchsorted(self.values, x, side="right")
        return (left + right) / (2 * n)

    def icdf(self, q):
        q = np.clip(np.asarray(q, dtype=np.float64), 0.0, 1.0)
        return np.interp(q, self._positions, self.values)

    @property
    def median(self) -> float:
        return float(self.icdf(0.5))


class Uniform:
    """Analytic Uniform(lo, hi) target; lo == hi degenerates to a point mass."""

    def __init__(self, lo: float, hi: float):
        lo, hi = float(lo), float(hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"invalid uniform support [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.is_degenerate:
            return np.where(x < self.lo, 0.0, 1.0)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def icdf(self, q):
        q = np.clip(np.asarray(q, dtype=np.float64), 0.0, 1.0)
        return self.lo + q * (self.hi - self.lo)

    @property
    def median(self) -> float:
        return (self.lo + self.hi) / 2


def icdf_map(values, source, target):
    """Map values through target_icdf(source_cdf(value)).

    Queries outside the source support clamp to its extremes.  A degenerate
    (single-valued) source pins every quantile at 0.5, which lands on the
    target median; that case is reported with a warning because the map then
    ignores the input entirely.
    """
    values = np.asarray(values, dtype=np.float64)
    if getattr(source, "is_degenerate", False) and not getattr(target, "is_degenerate", False):
        warnings.warn("source distribution is a single point; mapping everything to the target median",
                      stacklevel=2)
    out = target.icdf(source.cdf(values))
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


def sample_from_histogram(dist: SizeDistribution, n: int, seed: int = 0) -> np.ndarray:
    """Draw n values from a histogram: pick bins by mass, then uniform within."""
    if n < 0:
        raise ValueError(f"sample count must be nonnegative, got {n}")
    if n == 0:
        return np.empty(0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    masses = dist.masses / dist.masses.sum()
    idx = rng.choice(dist.k, size=n, p=masses)
    return rng.uniform(dist.bin_edges[idx], dist.bin_edges[idx + 1])
