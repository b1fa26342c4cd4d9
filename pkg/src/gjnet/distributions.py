"""Unitized (mean-one) interarrival/service distribution families.

Every family is parameterized so the analytic mean is exactly 1; actual
interarrival and service times are obtained by dividing a unitized variate
by the corresponding rate.  The family set is closed and enumerable so the
raw-moment finiteness conditions of the scaled-network model can be checked
exactly rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

__all__ = ["Family", "DistributionSpec", "exponential", "erlang",
           "hyperexp2", "deterministic", "uniform_0_2", "lognormal"]

_MEAN_TOL = 1e-12


class Family(str, Enum):
    EXPONENTIAL = "Exponential"
    ERLANG = "Erlang"
    HYPEREXP2 = "Hyperexponential2"
    DETERMINISTIC = "Deterministic"
    UNIFORM01X2 = "Uniform01x2"
    LOGNORMAL = "LogNormal"


@dataclass(frozen=True)
class DistributionSpec:
    """A unitized distribution: family tag plus family-specific parameters.

    Parameters
    ----------
    k
        Erlang shape (number of exponential stages), rate ``k`` so the
        mean is 1.
    p, ratio
        Two-phase hyperexponential: phase 1 is chosen with probability
        ``p``; ``ratio`` is mean(phase 1)/mean(phase 2).  Phase means are
        scaled so the mixture mean is exactly 1.
    sigma
        Log-normal shape; the log-mean is pinned to ``-sigma**2/2`` so the
        mean is 1.  The m-th raw moment is ``exp(m*(m-1)*sigma**2/2)``,
        finite for every m, which gives heavy-tailed-ish behavior without
        breaking any moment condition.
    """

    family: Family
    k: Optional[int] = None
    p: Optional[float] = None
    ratio: Optional[float] = None
    sigma: Optional[float] = None

    def __post_init__(self) -> None:
        f = self.family
        if f is Family.ERLANG:
            if not (isinstance(self.k, int) and self.k >= 1):
                raise ValueError("Erlang needs a positive integer stage count k")
        elif f is Family.HYPEREXP2:
            if self.p is None or not (0.0 < self.p < 1.0):
                raise ValueError("Hyperexponential2 needs phase probability p in (0,1)")
            if self.ratio is None or not (self.ratio > 0.0):
                raise ValueError("Hyperexponential2 needs a positive phase-mean ratio")
        elif f is Family.LOGNORMAL:
            if self.sigma is None or not (self.sigma > 0.0):
                raise ValueError("LogNormal needs a positive sigma")
        if abs(self.mean() - 1.0) > _MEAN_TOL:
            raise AssertionError(f"unitized family {f} has mean != 1")

    # -- analytic structure -------------------------------------------------

    def _hyper_means(self) -> tuple[float, float]:
        # mixture mean p*m1 + (1-p)*m2 == 1 with m1/m2 == ratio
        m2 = 1.0 / (self.p * self.ratio + (1.0 - self.p))
        return self.ratio * m2, m2

    def mean(self) -> float:
        return self.raw_moment(1.0)

    def raw_moment(self, m: float) -> float:
        """Exact analytic m-th raw moment, for real m >= 0.

        Returns ``math.inf`` for an infinite moment (cannot occur for the
        built-in families, but the contract allows it).
        """
        if m < 0:
            raise ValueError("moment order must be >= 0")
        if m == 0:
            return 1.0
        f = self.family
        if f is Family.EXPONENTIAL:
            return math.gamma(m + 1.0)
        if f is Family.ERLANG:
            k = float(self.k)
            # E[X^m] for Gamma(shape k, rate k)
            return math.exp(math.lgamma(k + m) - math.lgamma(k) - m * math.log(k))
        if f is Family.HYPEREXP2:
            m1, m2 = self._hyper_means()
            g = math.gamma(m + 1.0)
            return g * (self.p * m1**m + (1.0 - self.p) * m2**m)
        if f is Family.DETERMINISTIC:
            return 1.0
        if f is Family.UNIFORM01X2:
            # X = 2U, U ~ Uniform(0,1)
            return 2.0**m / (m + 1.0)
        if f is Family.LOGNORMAL:
            return math.exp(self.sigma**2 * m * (m - 1.0) / 2.0)
        raise AssertionError(f)

    def variance(self) -> float:
        return self.raw_moment(2.0) - 1.0

    def scv(self) -> float:
        """Squared coefficient of variation (variance, since the mean is 1)."""
        return self.variance()

    def quantile(self, q: float) -> float:
        """Inverse CDF; used to pick truncation levels off the tail."""
        if not (0.0 < q < 1.0):
            raise ValueError("q must be in (0,1)")
        f = self.family
        if f is Family.EXPONENTIAL:
            return -math.log1p(-q)
        if f is Family.ERLANG:
            from scipy.stats import gamma as _gamma
            return float(_gamma.ppf(q, a=self.k, scale=1.0 / self.k))
        if f is Family.HYPEREXP2:
            m1, m2 = self._hyper_means()
            p = self.p

            def cdf(x: float) -> float:
                return p * -math.expm1(-x / m1) + (1 - p) * -math.expm1(-x / m2)

            lo, hi = 0.0, max(m1, m2)
            while cdf(hi) < q:
                hi *= 2.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if cdf(mid) < q:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        if f is Family.DETERMINISTIC:
            return 1.0
        if f is Family.UNIFORM01X2:
            return 2.0 * q
        if f is Family.LOGNORMAL:
            from statistics import NormalDist
            return math.exp(-self.sigma**2 / 2.0 + self.sigma * NormalDist().inv_cdf(q))
        raise AssertionError(f)

    # -- sampling ------------------------------------------------------------

    def sample_block(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` unitized variates.

        Block draws consume the generator stream exactly as repeated
        single draws would, so block size does not affect reproducibility.
        """
        f = self.family
        if f is Family.EXPONENTIAL:
            return rng.exponential(size=n)
        if f is Family.ERLANG:
            return rng.gamma(shape=self.k, scale=1.0 / self.k, size=n)
        if f is Family.HYPEREXP2:
            m1, m2 = self._hyper_means()
            # fixed draw order (uniform block, then exponential block) is
            # part of the reproducibility contract
            phase1 = rng.random(n) < self.p
            e = rng.exponential(size=n)
            return e * np.where(phase1, m1, m2)
        if f is Family.DETERMINISTIC:
            return np.ones(n)
        if f is Family.UNIFORM01X2:
            return 2.0 * rng.random(n)
        if f is Family.LOGNORMAL:
            return rng.lognormal(mean=-self.sigma**2 / 2.0, sigma=self.sigma, size=n)
        raise AssertionError(f)

    def sample(self, rng: np.random.Generator) -> float:
        """Draw one unitized variate (always positive, analytic mean 1)."""
        return float(self.sample_block(1, rng)[0])

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        d: dict = {"family": self.family.value}
        if self.family is Family.ERLANG:
            d["k"] = self.k
        elif self.family is Family.HYPEREXP2:
            d["p"] = repr(self.p)
            d["ratio"] = repr(self.ratio)
        elif self.family is Family.LOGNORMAL:
            d["sigma"] = repr(self.sigma)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "DistributionSpec":
        fam = Family(d["family"])
        if fam is Family.ERLANG:
            return cls(fam, k=int(d["k"]))
        if fam is Family.HYPEREXP2:
            return cls(fam, p=float(d["p"]), ratio=float(d["ratio"]))
        if fam is Family.LOGNORMAL:
            return cls(fam, sigma=float(d["sigma"]))
        return cls(fam)


def exponential() -> DistributionSpec:
    return DistributionSpec(Family.EXPONENTIAL)


def erlang(k: int) -> DistributionSpec:
    return DistributionSpec(Family.ERLANG, k=k)


def hyperexp2(p: float, ratio: float) -> DistributionSpec:
    return DistributionSpec(Family.HYPEREXP2, p=p, ratio=ratio)


def deterministic() -> DistributionSpec:
    return DistributionSpec(Family.DETERMINISTIC)


def uniform_0_2() -> DistributionSpec:
    return DistributionSpec(Family.UNIFORM01X2)


def lognormal(sigma: float) -> DistributionSpec:
    return DistributionSpec(Family.LOGNORMAL, sigma=sigma)
