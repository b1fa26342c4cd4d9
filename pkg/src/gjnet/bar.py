"""Empirical verification of the basic adjoint relationship and estimation
of the scaled queue-length moment statements.

For a bounded state function f, stationarity forces the time average of the
negated interior drift to equal the sum over event types of rate-weighted
Palm expectations of the jump difference.  Both sides are estimated from
one simulation pass: the interior side as an exact time integral, the jump
side as raw event sums divided by the window length (the Palm normalization
cancels against the rate prefactor, so no rate estimate enters twice; the
rate-times-Palm-mean form is reported alongside for reference).  The
residual carries a batch-means interval; batches are time slices, with
events assigned by timestamp so interior and jump contributions within a
batch stay paired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import KIND_ARRIVAL, KIND_COMPLETION, RunConfig, RunResult, run
from .network import ScaledNetwork, spec_hash
from .stats import MomentReport, batch_means_ci, frepr
from .test_functions import (CoordinatePower, QueuePower, QueueResidualProduct,
                             StateFunction)

__all__ = ["BarResidualReport", "StatementEstimates", "verify_bar",
           "verify_bar_suite", "estimate_statements", "residual_moments",
           "palm_event_types"]


def palm_event_types(scaled: ScaledNetwork, moment_bound: float
                     ) -> list[tuple[int, int]]:
    """Event types entering the statement sums: external arrivals at
    stations 1..floor(min(M, J)) with a source, completions everywhere."""
    j = scaled.n_stations
    hi = math.floor(min(moment_bound, j))
    types = [(KIND_ARRIVAL, s) for s in range(min(hi, j)) if scaled.alpha[s] > 0]
    types += [(KIND_COMPLETION, s) for s in range(j)]
    return types


@dataclass(frozen=True)
class JumpTerm:
    kind: int
    station: int
    count: int
    sum_over_window: float      # (1/T) * sum of jump differences
    palm_mean: float            # event-average of the jump difference
    analytic_rate: float        # alpha_j or lambda_j
    rate_times_mean: float      # analytic rate * palm mean (reference form)


@dataclass(frozen=True)
class BarResidualReport:
    """Both sides of the stationarity identity for one bounded function."""

    function: str
    bound: float
    interior_term: float                    # estimate of -E[A f]
    jump_terms: tuple[JumpTerm, ...]
    residual: float
    half_width: float
    confidence: float
    n_batches: int
    batch_residuals: tuple[float, ...]
    horizon: float
    seeds: tuple[int, ...]
    spec_hash: str

    @property
    def jump_total(self) -> float:
        return sum(t.sum_over_window for t in self.jump_terms)

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= 3.0 * self.half_width

    def to_json_dict(self) -> dict:
        return {
            "function": self.function,
            "bound": frepr(self.bound),
            "interior_term": frepr(self.interior_term),
            "jump_total": frepr(self.jump_total),
            "residual": frepr(self.residual),
            "half_width": frepr(self.half_width),
            "confidence": frepr(self.confidence),
            "n_batches": self.n_batches,
            "passed": self.passed,
            "horizon": frepr(self.horizon),
            "seeds": list(self.seeds),
            "spec_hash": self.spec_hash,
            "jump_terms": [
                {"kind": "arrival" if t.kind == KIND_ARRIVAL else "completion",
                 "station": t.station + 1, "count": t.count,
                 "sum_over_window": frepr(t.sum_over_window),
                 "palm_mean": frepr(t.palm_mean),
                 "analytic_rate": frepr(t.analytic_rate),
                 "rate_times_mean": frepr(t.rate_times_mean)}
                for t in self.jump_terms],
        }


def _require_bounded(f: StateFunction) -> None:
    if f.bound is None:
        raise ValueError(
            f"{f.name} is unbounded (no truncation); only bounded members are "
            "admissible in the stationarity identity check")


def verify_bar_suite(scaled: ScaledNetwork, functions: dict[str, StateFunction],
                     cfg: RunConfig, reps: int = 1
                     ) -> dict[str, BarResidualReport]:
    """Estimate the stationarity residual for several bounded functions in
    one engine pass per replication."""
    for f in functions.values():
        _require_bounded(f)
    runs: list[RunResult] = []
    seeds = []
    for rep in range(reps):
        c = RunConfig(horizon=cfg.horizon, warmup_frac=cfg.warmup_frac,
                      n_batches=cfg.n_batches, seed=cfg.seed, rep=cfg.rep + rep,
                      thin=cfg.thin, confidence=cfg.confidence,
                      chunk_size=cfg.chunk_size, rng_block=cfg.rng_block)
        runs.append(run(
            scaled, c,
            time_integrands={name: f.interior_integrand()
                             for name, f in functions.items()},
            jump_functions=dict(functions)))
        seeds.append((cfg.seed, cfg.rep + rep))
    out = {}
    shash = spec_hash(scaled.spec)
    for name, f in functions.items():
        interior = 0.0
        jump_sums = np.zeros((2, scaled.n_stations))
        counts = np.zeros((2, scaled.n_stations), dtype=np.int64)
        batch_resid = []
        window = 0.0
        for res in runs:
            tot, batch_tot, _ = res.integrals[name]
            jsums, jbatch = res.jump_sums[name]
            interior += tot
            jump_sums += jsums
            counts += res.counts
            window += res.window
            batch_resid.append((batch_tot - jbatch) / res.batch_len)
        series = np.concatenate(batch_resid)
        residual, hw = batch_means_ci(series, cfg.confidence)
        terms = []
        for kind in (KIND_ARRIVAL, KIND_COMPLETION):
            for st in range(scaled.n_stations):
                c = int(counts[kind, st])
                if kind == KIND_ARRIVAL and scaled.alpha[st] <= 0:
                    continue
                rate = scaled.alpha[st] if kind == KIND_ARRIVAL else scaled.lam[st]
                mean = float(jump_sums[kind, st]) / c if c else 0.0
                terms.append(JumpTerm(
                    kind=kind, station=st, count=c,
                    sum_over_window=float(jump_sums[kind, st]) / window,
                    palm_mean=mean, analytic_rate=rate,
                    rate_times_mean=rate * mean))
        out[name] = BarResidualReport(
            function=f.name, bound=float(f.bound),
            interior_term=interior / window,
            jump_terms=tuple(terms),
            residual=float(residual), half_width=float(hw),
            confidence=cfg.confidence, n_batches=int(series.size),
            batch_residuals=tuple(float(x) for x in series),
            horizon=cfg.horizon, seeds=tuple(s[1] for s in seeds),
            spec_hash=shash)
    return out


def verify_bar(scaled: ScaledNetwork, f: StateFunction, cfg: RunConfig,
               reps: int = 1) -> BarResidualReport:
    """Estimate both sides of the stationarity identity for one function."""
    _require_bounded(f)
    return verify_bar_suite(scaled, {"f": f}, cfg, reps)["f"]


# ---------------------------------------------------------------------------
# statement estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatementEstimates:
    """The four scaled queue-length moment statistics for one (k, n, M, r):
    time average of (r^k Z_k)^n, its sum of Palm event averages, and the
    same pair with the residual power-sum factor of order M - n."""

    k: int
    n: float
    moment_bound: float
    r: float
    s1: MomentReport
    s2: MomentReport
    s3: MomentReport
    s4: MomentReport

    def to_json_dict(self) -> dict:
        return {"k": self.k, "n": frepr(self.n), "M": frepr(self.moment_bound),
                "r": frepr(self.r),
                "s1": self.s1.to_json_dict(), "s2": self.s2.to_json_dict(),
                "s3": self.s3.to_json_dict(), "s4": self.s4.to_json_dict()}


def merge_time_reports(name: str, runs: Sequence[RunResult],
                       confidence: float) -> MomentReport:
    """Pool one time-average functional across replications: estimates
    weight by (equal) window lengths and batch series concatenate."""
    return _merge_time_reports(name, runs, confidence)


def _merge_time_reports(name: str, runs: Sequence[RunResult],
                        confidence: float) -> MomentReport:
    total = sum(res.integrals[name][0] for res in runs)
    window = sum(res.window for res in runs)
    series = np.concatenate([res.integrals[name][1] / res.batch_len for res in runs])
    _, hw = batch_means_ci(series, confidence)
    half = series[: max(1, series.size // 2)]
    first = runs[0]
    return MomentReport(
        name=name, estimate=float(total / window), half_width=float(hw),
        confidence=confidence, n_batches=int(series.size),
        batch_means=tuple(float(x) for x in series),
        first_half_estimate=float(half.mean()),
        warmup_time=first.t_warm, horizon=first.t_end,
        exact_quadrature=all(res.integrals[name][2] for res in runs),
        spec_hash=spec_hash(first.scaled.spec), seed=first.cfg.seed)


def _merge_event_reports(name: str, runs: Sequence[RunResult],
                         types: list[tuple[int, int]],
                         confidence: float) -> MomentReport:
    est = 0.0
    sums = sum(res.event_sums[name][0] for res in runs)
    counts = sum(res.counts for res in runs)
    for kind, st in types:
        c = int(counts[kind, st])
        if c:
            est += float(sums[kind, st]) / c
    series = []
    for res in runs:
        _, batch_sums = res.event_sums[name]
        bc = res.batch_counts
        ok = np.ones(res.cfg.n_batches, dtype=bool)
        per_batch = np.zeros(res.cfg.n_batches)
        for kind, st in types:
            cnt = bc[kind, st]
            ok &= cnt > 0
            per_batch += np.where(cnt > 0, batch_sums[kind, st] / np.maximum(cnt, 1), 0.0)
        series.append(per_batch[ok])
    series = np.concatenate(series)
    _, hw = batch_means_ci(series, confidence)
    half = series[: max(1, series.size // 2)] if series.size else np.array([est])
    first = runs[0]
    return MomentReport(
        name=name, estimate=float(est), half_width=float(hw), confidence=confidence,
        n_batches=int(series.size), batch_means=tuple(float(x) for x in series),
        first_half_estimate=float(half.mean()), warmup_time=first.t_warm,
        horizon=first.t_end, exact_quadrature=True,
        spec_hash=spec_hash(first.scaled.spec), seed=first.cfg.seed)


def estimate_statements(scaled: ScaledNetwork, k: int, n: float,
                        moment_bound: Optional[float] = None,
                        cfg: Optional[RunConfig] = None, reps: int = 1,
                        ) -> StatementEstimates:
    """Estimate the four moment statistics for the pair (k, n).

    Real (non-integer) exponents are supported; the residual power-sum
    order is M - n, so passing the non-integer bound beta as ``M`` with
    ``n = beta - 1`` reproduces the order-1 residual factor.
    """
    if cfg is None:
        raise ValueError("run configuration required")
    big_m = float(moment_bound if moment_bound is not None
                  else scaled.spec.moment_order)
    j = scaled.n_stations
    k_hi = math.floor(min(big_m, j))
    if not (1 <= k <= k_hi):
        raise ValueError(f"k must be in 1..{k_hi} (floor(min(M, J)))")
    if not (0.0 <= n <= big_m):
        raise ValueError(f"n must be in [0, M={big_m:g}]")
    zpow = QueuePower(scaled, k, n)
    zpsi = QueueResidualProduct(scaled, k, n, (big_m - n,),
                                moment_bound=big_m,
                                name=f"zpow(k={k},n={n:g})*psi({big_m - n:g})")
    runs = []
    for rep in range(reps):
        c = RunConfig(horizon=cfg.horizon, warmup_frac=cfg.warmup_frac,
                      n_batches=cfg.n_batches, seed=cfg.seed, rep=cfg.rep + rep,
                      thin=cfg.thin, confidence=cfg.confidence,
                      chunk_size=cfg.chunk_size, rng_block=cfg.rng_block)
        runs.append(run(scaled, c,
                        time_integrands={"s1": zpow, "s3": zpsi},
                        event_stats={"s2": zpow, "s4": zpsi}))
    types = palm_event_types(scaled, big_m)
    return StatementEstimates(
        k=k, n=float(n), moment_bound=big_m, r=scaled.r,
        s1=_merge_time_reports("s1", runs, cfg.confidence),
        s2=_merge_event_reports("s2", runs, types, cfg.confidence),
        s3=_merge_time_reports("s3", runs, cfg.confidence),
        s4=_merge_event_reports("s4", runs, types, cfg.confidence))


def residual_moments(scaled: ScaledNetwork, moment_bound: Optional[float] = None,
                     cfg: Optional[RunConfig] = None
                     ) -> dict[str, MomentReport]:
    """Time averages of per-station residual-time powers of order M,
    including the busy/idle decomposition of the service coordinates."""
    if cfg is None:
        raise ValueError("run configuration required")
    big_m = float(moment_bound if moment_bound is not None
                  else scaled.spec.moment_order)
    if big_m < 1.0:
        raise ValueError("moment order must be >= 1")
    integrands = {}
    for j in range(1, scaled.n_stations + 1):
        if scaled.alpha[j - 1] > 0:
            integrands[f"re{j}"] = CoordinatePower(scaled, "e", j, big_m)
        integrands[f"rs{j}"] = CoordinatePower(scaled, "s", j, big_m)
        integrands[f"rs{j}_busy"] = CoordinatePower(scaled, "s", j, big_m, gate="busy")
        integrands[f"rs{j}_idle"] = CoordinatePower(scaled, "s", j, big_m, gate="idle")
    res = run(scaled, cfg, time_integrands=integrands)
    return {name: res.time_average(name) for name in integrands}
