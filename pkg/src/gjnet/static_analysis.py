"""Exact linear-algebraic quantities derived from (alpha, P).

Everything here is deterministic: total arrival rates, the hitting-
probability matrix ``w`` (probability a routed job starting at j reaches k
before exiting or visiting any station above k), the critical scale below
which every station's drift margin is safely positive, the per-station
weight vectors and drift coefficient triples used by the state functions,
and the drift margin identity itself.  A Monte Carlo routing-path oracle is
included as an independent cross-check of the ``w`` computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import NetworkValidationError, RoutingMatrix, ScaledNetwork

__all__ = [
    "TrafficSolution",
    "HeavyTrafficProfile",
    "DriftMargin",
    "solve_traffic",
    "hitting_matrix",
    "simulate_hitting_probability",
    "critical_scale",
    "heavy_traffic_profile",
    "drift_margin",
]

# entries below this are structural zeros surviving a linear solve
W_ZERO_TOL = 1e-12
_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class TrafficSolution:
    """Solution of lam = alpha + P^T lam, componentwise positive."""

    lam: tuple[float, ...]

    def rho(self, mu: tuple[float, ...]) -> tuple[float, ...]:
        return tuple(l / m for l, m in zip(self.lam, mu))


def solve_traffic(alpha: tuple[float, ...], routing: RoutingMatrix) -> TrafficSolution:
    """Solve the traffic equations lam_j = alpha_j + sum_l lam_l P[l][j]."""
    a = np.asarray(alpha, dtype=float)
    p = routing.as_array()
    n = len(a)
    try:
        lam = np.linalg.solve(np.eye(n) - p.T, a)
    except np.linalg.LinAlgError as e:
        raise NetworkValidationError("traffic equations unsolvable (closed network)") from e
    resid = np.linalg.norm(lam - (a + p.T @ lam))
    if resid > _RESIDUAL_TOL * max(1.0, float(np.linalg.norm(lam))):
        raise NetworkValidationError(f"traffic solve residual {resid:g} too large")
    return TrafficSolution(lam=tuple(float(x) for x in lam))


def hitting_matrix(routing: RoutingMatrix) -> np.ndarray:
    """Probabilities w[j][k] of reaching k from j before exit or any
    station above k.

    Solved column by column: for column k the unknowns w[0..k-1] satisfy
    (I - P[0:k, 0:k]) w = P[0:k, k] (0-indexed), after which rows j >= k
    follow directly from w[j][k] = P[j][k] + sum_{l<k} P[j][l] w[l][k].
    """
    p = routing.as_array()
    n = routing.n_stations
    w = np.zeros((n, n))
    for k in range(n):
        if k > 0:
            block = np.eye(k) - p[:k, :k]
            w[:k, k] = np.linalg.solve(block, p[:k, k])
        w[k:, k] = p[k:, k] + p[k:, :k] @ w[:k, k]
    # recursion residual check (uniqueness guarantees solvability; assert anyway)
    rhs = np.zeros_like(w)
    for k in range(n):
        rhs[:, k] = p[:, k] + p[:, :k] @ w[:k, k]
    resid = float(np.abs(w - rhs).max(initial=0.0))
    if resid > _RESIDUAL_TOL:
        raise AssertionError(f"hitting-matrix recursion residual {resid:g}")
    if w.min(initial=0.0) < -_RESIDUAL_TOL or w.max(initial=0.0) > 1.0 + _RESIDUAL_TOL:
        raise AssertionError("hitting probabilities escaped [0,1]")
    w = np.clip(w, 0.0, 1.0)
    if any(w[k, k] >= 1.0 for k in range(n)):
        raise AssertionError("diagonal hitting probability reached 1 (closed network?)")
    return w


def simulate_hitting_probability(
    routing: RoutingMatrix,
    j: int,
    k: int,
    n_paths: int,
    rng: np.random.Generator,
    max_hops: int = 10_000,
) -> tuple[float, float]:
    """Brute-force oracle for :func:`hitting_matrix` entry (j, k); 1-indexed.

    Simulates routing paths started at station j and counts the fraction
    that enter station k before exiting the network or visiting any station
    in {k+1, ..., J}.  Returns (estimate, binomial standard error).
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    n = routing.n_stations
    if not (1 <= j <= n and 1 <= k <= n):
        raise ValueError("station indices out of range")
    p = routing.as_array()
    # destination cut points per station; index n means exit
    cum = np.cumsum(p, axis=1)
    current = np.full(n_paths, j - 1, dtype=np.int64)
    hit = np.zeros(n_paths, dtype=bool)
    active = np.ones(n_paths, dtype=bool)
    for _ in range(max_hops):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        dest = np.empty(idx.size, dtype=np.int64)
        cur = current[idx]
        for s in range(n):
            m = cur == s
            if m.any():
                dest[m] = np.searchsorted(cum[s], u[m], side="right")
        exited = dest >= n
        reached = dest == k - 1
        above = (dest > k - 1) & ~exited
        done = exited | reached | above
        hit[idx[reached]] = True
        active[idx[done]] = False
        current[idx[~done]] = dest[~done]
    else:
        raise AssertionError("routing paths failed to absorb; matrix not transient?")
    est = float(hit.mean())
    se = math.sqrt(est * (1.0 - est) / n_paths)
    return est, se


def critical_scale(w: np.ndarray) -> tuple[float, float]:
    """Largest guaranteed-safe scale derived from the hitting matrix.

    Returns ``(raw, clamped)`` where raw is
    ``min over {k < j, w[j][k] != 0} of ((1 - w[k][k]) / (J w[j][k]))**(1/(j-k))``
    (1 if the set is empty) and clamped is ``min(raw, 1)`` since the model
    is only defined for scales in (0,1).  Entries below ``W_ZERO_TOL`` are
    treated as structural zeros.
    """
    n = w.shape[0]
    raw = 1.0
    found = False
    for k in range(n):
        for j in range(k + 1, n):
            if w[j, k] > W_ZERO_TOL:
                cand = ((1.0 - w[k, k]) / (n * w[j, k])) ** (1.0 / (j - k))
                raw = cand if not found else min(raw, cand)
                found = True
    if not found:
        raw = 1.0
    return raw, min(raw, 1.0)


@dataclass(frozen=True)
class HeavyTrafficProfile:
    """Per-station weight vectors and drift coefficients at a given scale.

    For station k (1-indexed), ``u_vectors[k-1]`` is
    ``(w[1][k], ..., w[k-1][k], 1, 0, ..., 0)`` and the drift coefficient
    pair gives the linear form
    ``sum_j coef_e[j] * r_e[j] + sum_j coef_s[j] * r_s[j]`` with
    ``coef_e[j] = -u_j alpha_j`` for j <= k and
    ``coef_s[j] = mu_k 1{j==k} - w[j][k] mu_j`` for j >= k.
    """

    scaled: ScaledNetwork
    w: np.ndarray
    r0_raw: float
    r0: float
    u_vectors: tuple[tuple[float, ...], ...]
    e_coefs: tuple[tuple[float, ...], ...]
    s_coefs: tuple[tuple[float, ...], ...]

    def u(self, k: int) -> np.ndarray:
        return np.asarray(self.u_vectors[k - 1])

    def drift_coefficients(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.e_coefs[k - 1]), np.asarray(self.s_coefs[k - 1])


def heavy_traffic_profile(scaled: ScaledNetwork) -> HeavyTrafficProfile:
    w = hitting_matrix(scaled.spec.routing)
    r0_raw, r0 = critical_scale(w)
    n = scaled.n_stations
    alpha = scaled.alpha
    mu = scaled.mu
    us, ecs, scs = [], [], []
    for k in range(1, n + 1):
        u = [float(w[j, k - 1]) for j in range(k - 1)] + [1.0] + [0.0] * (n - k)
        ce = [-u[j] * alpha[j] if j < k else 0.0 for j in range(n)]
        cs = [0.0] * n
        for j in range(k - 1, n):
            cs[j] = (mu[k - 1] if j == k - 1 else 0.0) - float(w[j, k - 1]) * mu[j]
        us.append(tuple(u))
        ecs.append(tuple(ce))
        scs.append(tuple(cs))
    return HeavyTrafficProfile(
        scaled=scaled, w=w, r0_raw=r0_raw, r0=r0,
        u_vectors=tuple(us), e_coefs=tuple(ecs), s_coefs=tuple(scs))


@dataclass(frozen=True)
class DriftMargin:
    """The station-k drift margin in three exactly-computable forms.

    ``lhs`` is the coefficient sum
    ``-sum_{j<=k} u_j alpha_j + mu_k - sum_{j>=k} w[j][k] mu_j``;
    ``identity_rhs`` is the algebraically equal form
    ``(1 - w[k][k]) r**k - sum_{j>k} w[j][k] r**j`` (equality holds for all
    r in (0,1), not just below the critical scale); ``lower_bound`` is
    ``(1 - w[k][k]) r**k / J``, guaranteed to be below ``lhs`` whenever
    r < r0.
    """

    lhs: float
    identity_rhs: float
    lower_bound: float


def drift_margin(scaled: ScaledNetwork, profile: HeavyTrafficProfile, k: int) -> DriftMargin:
    n = scaled.n_stations
    if not (1 <= k <= n):
        raise ValueError("station index out of range")
    w = profile.w
    mu = scaled.mu
    r = scaled.r
    u = profile.u_vectors[k - 1]
    lhs = -sum(u[j] * scaled.alpha[j] for j in range(k)) + mu[k - 1]
    lhs -= sum(float(w[j, k - 1]) * mu[j] for j in range(k - 1, n))
    rhs = (1.0 - float(w[k - 1, k - 1])) * r**k
    rhs -= sum(float(w[j, k - 1]) * r ** (j + 1) for j in range(k, n))
    lower = (1.0 - float(w[k - 1, k - 1])) * r**k / n
    return DriftMargin(lhs=lhs, identity_rhs=rhs, lower_bound=lower)
