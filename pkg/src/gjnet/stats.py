"""Statistical helpers: batch-means intervals, trend and fit tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats as sps

__all__ = ["MomentReport", "frepr", "batch_means_ci", "mann_kendall_increasing",
           "geometric_chisquare", "ks_distance_exponential"]


def frepr(x) -> str:
    """Shortest exact decimal form of a float, for JSON/CSV serialization."""
    return repr(float(x))


@dataclass(frozen=True)
class MomentReport:
    """A point estimate with batch-means uncertainty and provenance."""

    name: str
    estimate: float
    half_width: float
    confidence: float
    n_batches: int
    batch_means: tuple[float, ...]
    first_half_estimate: float
    warmup_time: float
    horizon: float
    exact_quadrature: bool = True
    spec_hash: str = ""
    seed: int = 0

    @property
    def stderr(self) -> float:
        if self.n_batches < 2:
            return math.nan
        return float(np.std(self.batch_means, ddof=1) / math.sqrt(self.n_batches))

    def contains(self, value: float) -> bool:
        return abs(self.estimate - value) <= self.half_width

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": frepr(self.estimate),
            "half_width": frepr(self.half_width),
            "confidence": frepr(self.confidence),
            "n_batches": self.n_batches,
            "first_half_estimate": frepr(self.first_half_estimate),
            "warmup_time": frepr(self.warmup_time),
            "horizon": frepr(self.horizon),
            "exact_quadrature": self.exact_quadrature,
            "spec_hash": self.spec_hash,
            "seed": self.seed,
        }


def batch_means_ci(batch_values: np.ndarray, confidence: float) -> tuple[float, float]:
    """Mean and half-width of a batch-means confidence interval.

    Treats the batch values as approximately independent normal samples;
    valid when batches are much longer than the process mixing time.
    """
    b = np.asarray(batch_values, dtype=float)
    n = b.size
    mean = float(b.mean()) if n else math.nan
    if n < 2:
        return mean, math.inf
    s = float(b.std(ddof=1))
    tq = float(sps.t.ppf(0.5 + confidence / 2.0, df=n - 1))
    return mean, tq * s / math.sqrt(n)


@lru_cache(maxsize=None)
def _mahonian(n: int) -> tuple[int, ...]:
    """Counts of permutations of n items by inversion number."""
    counts = [1]
    for m in range(2, n + 1):
        new = [0] * (len(counts) + m - 1)
        for d, c in enumerate(counts):
            for k in range(m):
                new[d + k] += c
        counts = new
    return tuple(counts)


def mann_kendall_increasing(values) -> tuple[int, float]:
    """Mann-Kendall S statistic and one-sided p-value for an increasing trend.

    Exact null distribution (via inversion counts) for n <= 12 and no ties;
    normal approximation with continuity and tie correction otherwise.
    """
    x = [float(v) for v in values]
    n = len(x)
    if n < 2:
        return 0, 1.0
    s = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            d = x[j] - x[i]
            s += (d > 0) - (d < 0)
    has_ties = len(set(x)) != n
    if n <= 12 and not has_ties:
        counts = _mahonian(n)
        total = math.factorial(n)
        npairs = n * (n - 1) // 2
        # S = npairs - 2 * inversions
        p = sum(c for d, c in enumerate(counts) if npairs - 2 * d >= s) / total
        return s, p
    # normal approximation
    var = n * (n - 1) * (2 * n + 5) / 18.0
    if has_ties:
        from collections import Counter
        for _, g in Counter(x).items():
            var -= g * (g - 1) * (2 * g + 5) / 18.0
    if var <= 0:
        return s, 1.0
    z = (s - 1) / math.sqrt(var) if s > 0 else (s + 1) / math.sqrt(var) if s < 0 else 0.0
    return s, float(sps.norm.sf(z))


def geometric_chisquare(samples: np.ndarray, rho: float,
                        min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness of fit of integer samples to Geometric(rho),
    pmf (1-rho) rho^k on k = 0, 1, ...

    Bins are consecutive runs of k merged until each expected count reaches
    ``min_expected``; the final bin absorbs the tail.  Returns
    (statistic, p-value, degrees of freedom).  The samples are assumed
    approximately independent (thin upstream as needed).
    """
    x = np.asarray(samples, dtype=np.int64)
    n = x.size
    if n < 10:
        raise ValueError("too few samples for a chi-square fit")
    # merge consecutive k until expected >= min_expected
    edges = [0]
    acc = 0.0
    k = 0
    while True:
        pk = (1.0 - rho) * rho**k
        acc += pk * n
        tail = n * rho ** (k + 1)
        if acc >= min_expected and tail >= min_expected:
            edges.append(k + 1)
            acc = 0.0
        if tail < min_expected:
            break
        k += 1
        if k > 10_000_000:
            raise AssertionError("geometric bin construction ran away")
    # bins: [edges[i], edges[i+1]) plus tail [edges[-1], inf)
    obs = []
    exp = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        obs.append(int(((x >= lo) & (x < hi)).sum()))
        exp.append(n * (rho**lo - rho**hi))
    obs.append(int((x >= edges[-1]).sum()))
    exp.append(n * rho ** edges[-1])
    if len(obs) < 2:
        raise ValueError("not enough probability mass to form two bins")
    stat, p = sps.chisquare(obs, exp)
    return float(stat), float(p), len(obs) - 1


def ks_distance_exponential(values: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance of a sample to the exponential law with
    the same mean (report-only diagnostic, no pass threshold)."""
    v = np.asarray(values, dtype=float)
    m = v.mean()
    if not (m > 0):
        return math.nan
    res = sps.kstest(v, lambda x: -np.expm1(-x / m))
    return float(res.statistic)
