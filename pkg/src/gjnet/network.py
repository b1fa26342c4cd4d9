"""Network specifications and multi-scale service-rate scaling.

A :class:`NetworkSpec` describes an open single-class FCFS network: external
arrival rates, a transient routing matrix, one unitized distribution per
arrival/service stream, and a target moment order M.  Binding a spec to a
scale ``r`` yields a :class:`ScaledNetwork` whose service rates are
``mu_j = lam_j + r**j``, so station j's traffic intensity approaches one at
its own speed ``r**j``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .distributions import DistributionSpec

__all__ = ["RoutingMatrix", "NetworkSpec", "ScaledNetwork", "make_scaled",
           "spec_hash"]

_SPECTRAL_TOL = 1e-10


class NetworkValidationError(ValueError):
    """A network description violates a structural requirement."""


@dataclass(frozen=True)
class RoutingMatrix:
    """Markovian routing probabilities; entry (j, k) routes j -> k.

    Exit probabilities are the row deficits ``1 - sum_k P[j][k]``.  The
    matrix must be transient (spectral radius < 1, equivalently I - P
    invertible), i.e. the network is open.
    """

    p: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.p)
        for row in self.p:
            if len(row) != n:
                raise NetworkValidationError("routing matrix must be square")
            if any(x < 0.0 for x in row):
                raise NetworkValidationError("routing probabilities must be >= 0")
            if sum(row) > 1.0 + 1e-12:
                raise NetworkValidationError("routing row sum exceeds 1")
        if n:
            radius = max(abs(np.linalg.eigvals(self.as_array())))
            if radius >= 1.0 - _SPECTRAL_TOL:
                raise NetworkValidationError(
                    f"routing matrix is not transient (spectral radius {radius:.6g}); "
                    "the network must be open")

    @property
    def n_stations(self) -> int:
        return len(self.p)

    def as_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)

    def exit_probs(self) -> np.ndarray:
        return np.maximum(0.0, 1.0 - self.as_array().sum(axis=1))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "RoutingMatrix":
        return cls(tuple(tuple(float(x) for x in row) for row in rows))


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable description of an open generalized Jackson network.

    ``arrival[j]`` must be None exactly where ``alpha[j] == 0``; such
    stations generate no external-arrival events and their residual
    interarrival coordinate is undefined (state functions referencing it
    are rejected at construction).

    ``moment_order`` is the target moment order M (positive real allowed);
    it fixes which arrival streams must satisfy the E[T^(M+1)] < inf
    finiteness condition, namely stations 1..floor(min(M, J)) with
    alpha > 0, plus every service stream.
    """

    alpha: tuple[float, ...]
    routing: RoutingMatrix
    arrival: tuple[Optional[DistributionSpec], ...]
    service: tuple[DistributionSpec, ...]
    moment_order: float

    def __post_init__(self) -> None:
        j = len(self.alpha)
        if j == 0:
            raise NetworkValidationError("network needs at least one station")
        if self.routing.n_stations != j or len(self.arrival) != j or len(self.service) != j:
            raise NetworkValidationError("alpha, routing, arrival, service sizes disagree")
        if any(a < 0.0 for a in self.alpha):
            raise NetworkValidationError("external arrival rates must be >= 0")
        if not any(a > 0.0 for a in self.alpha):
            raise NetworkValidationError("at least one station needs external arrivals")
        for i, (a, d) in enumerate(zip(self.alpha, self.arrival)):
            if (a > 0.0) != (d is not None):
                raise NetworkValidationError(
                    f"station {i + 1}: arrival distribution must be present iff alpha > 0")
        if not (self.moment_order > 0.0):
            raise NetworkValidationError("moment order M must be positive")
        lam = _solve_lambda(self.alpha, self.routing)
        if any(x <= 0.0 for x in lam):
            raise NetworkValidationError(
                "every station must receive work (solved total arrival rates "
                f"{lam} are not strictly positive)")
        object.__setattr__(self, "_lam", tuple(lam))
        self._check_moment_condition()

    def _check_moment_condition(self) -> None:
        m1 = self.moment_order + 1.0
        j_hi = math.floor(min(self.moment_order, self.n_stations))
        for i in range(j_hi):
            d = self.arrival[i]
            if d is not None and not math.isfinite(d.raw_moment(m1)):
                raise NetworkValidationError(
                    f"arrival stream {i + 1} lacks a finite moment of order {m1}")
        for i, d in enumerate(self.service):
            if not math.isfinite(d.raw_moment(m1)):
                raise NetworkValidationError(
                    f"service stream {i + 1} lacks a finite moment of order {m1}")

    @property
    def n_stations(self) -> int:
        return len(self.alpha)

    @property
    def lam(self) -> tuple[float, ...]:
        """Nominal total arrival rates (external plus internal)."""
        return self._lam  # type: ignore[attr-defined]

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "J": self.n_stations,
            "alpha": [repr(a) for a in self.alpha],
            "P": [[repr(x) for x in row] for row in self.routing.p],
            "arrival": [d.to_json_dict() if d is not None else None for d in self.arrival],
            "service": [d.to_json_dict() for d in self.service],
            "M": repr(self.moment_order),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkSpec":
        j = int(d["J"])
        alpha = tuple(float(x) for x in d["alpha"])
        if len(alpha) != j:
            raise NetworkValidationError("J disagrees with alpha length")
        routing = RoutingMatrix.from_rows([[float(x) for x in row] for row in d["P"]])
        arrival = tuple(
            DistributionSpec.from_json_dict(x) if x is not None else None
            for x in d["arrival"])
        service = tuple(DistributionSpec.from_json_dict(x) for x in d["service"])
        return cls(alpha=alpha, routing=routing, arrival=arrival, service=service,
                   moment_order=float(d["M"]))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_json_dict(json.loads(text))


def spec_hash(spec: NetworkSpec) -> str:
    """SHA-256 of the canonical JSON form; identifies a spec in manifests."""
    canon = json.dumps(spec.to_json_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _solve_lambda(alpha: Sequence[float], routing: RoutingMatrix) -> list[float]:
    a = np.asarray(alpha, dtype=float)
    p = routing.as_array()
    n = len(a)
    lam = np.linalg.solve(np.eye(n) - p.T, a)
    resid = lam - (a + p.T @ lam)
    if np.linalg.norm(resid) > 1e-10 * max(1.0, np.linalg.norm(lam)):
        raise NetworkValidationError("traffic equations unsolvable to tolerance")
    return [float(x) for x in lam]


@dataclass(frozen=True)
class ScaledNetwork:
    """A NetworkSpec bound to a scale r in (0,1), with derived rates.

    ``mu[j-1] - lam[j-1] == r**j`` exactly (to floating point), and every
    traffic intensity ``rho[j-1] = lam[j-1]/mu[j-1]`` is in (0,1).
    """

    spec: NetworkSpec
    r: float
    mu: tuple[float, ...]
    rho: tuple[float, ...]

    @property
    def n_stations(self) -> int:
        return self.spec.n_stations

    @property
    def alpha(self) -> tuple[float, ...]:
        return self.spec.alpha

    @property
    def lam(self) -> tuple[float, ...]:
        return self.spec.lam


def make_scaled(spec: NetworkSpec, r: float) -> ScaledNetwork:
    """Bind a spec to scale r: service rates mu_j = lam_j + r**j.

    Deterministic: identical inputs give bitwise-identical outputs.
    """
    if not (0.0 < r < 1.0):
        raise NetworkValidationError(f"scale r must be in (0,1), got {r}")
    lam = spec.lam
    mu = tuple(lam[j] + r ** (j + 1) for j in range(spec.n_stations))
    rho = tuple(lam[j] / mu[j] for j in range(spec.n_stations))
    if any(not (0.0 < x < 1.0) for x in rho):
        raise NetworkValidationError(f"traffic intensities {rho} not all in (0,1)")
    return ScaledNetwork(spec=spec, r=r, mu=mu, rho=rho)
