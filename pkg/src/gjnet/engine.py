"""Event-driven simulation of the queue-length/residual-time Markov process.

The state is ``X(t) = (Z, R_e, R_s)``: queue lengths (including any job in
service), residual external interarrival times, and the residual service
time of the in-service job (or of the next job while a station idles, in
which case the coordinate is frozen).  Between jumps each active residual
decreases at slope -1, so any registered functional that is polynomial in
elapsed time along a segment can be integrated exactly.

Residuals are stored internally as absolute next-event clocks to avoid
per-step decrement drift; the state view converts back to residuals.
Events are selected through a binary heap keyed by (clock, tie-rank,
station) with service completions ordered before external arrivals; tied
events are processed as separate consecutive jumps at the same clock value.

The fast path :func:`run` streams per-event rows into fixed-size numpy
chunks consumed by vectorized accumulators (time integrals, event
statistics, jump sums, Palm records).  The single-step reference path
:func:`step` advances one jump at a time; both consume per-stream random
variates in the same order, so they produce identical trajectories for the
same seed.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Optional

import numpy as np

from .network import ScaledNetwork, spec_hash
from .stats import MomentReport, batch_means_ci

__all__ = [
    "KIND_COMPLETION", "KIND_ARRIVAL", "SimState", "JumpRecord", "EngineRng",
    "RunConfig", "EventChunk", "PalmSampleSet", "RunResult",
    "initial_state", "step", "apply_jump", "run",
]

KIND_COMPLETION = 0
KIND_ARRIVAL = 1
_INF = math.inf


# ---------------------------------------------------------------------------
# random variate streams
# ---------------------------------------------------------------------------

class _VariateStream:
    """Block-buffered unitized variates from one distribution stream."""

    __slots__ = ("dist", "rng", "block", "buf", "i")

    def __init__(self, dist, root_seed: int, key: tuple[int, ...], block: int):
        self.dist = dist
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(root_seed, spawn_key=key)))
        self.block = block
        self.buf = dist.sample_block(block, self.rng)
        self.i = 0

    def draw(self) -> float:
        i = self.i
        if i >= self.block:
            self.buf = self.dist.sample_block(self.block, self.rng)
            i = 0
        self.i = i + 1
        return self.buf[i]


class _RouteStream:
    """Block-buffered routing decisions for one station.

    Draws a uniform and picks the destination by its cumulative routing
    probabilities; index J means exit.
    """

    __slots__ = ("cum", "n", "rng", "block", "buf", "i")

    def __init__(self, row: tuple[float, ...], root_seed: int, key: tuple[int, ...],
                 block: int):
        cum = []
        acc = 0.0
        for x in row:
            acc += x
            cum.append(acc)
        self.cum = cum
        self.n = len(row)
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(root_seed, spawn_key=key)))
        self.block = block
        self.buf = self.rng.random(block)
        self.i = 0

    def draw(self) -> int:
        i = self.i
        if i >= self.block:
            self.buf = self.rng.random(self.block)
            i = 0
        self.i = i + 1
        return bisect_right(self.cum, self.buf[i])


class EngineRng:
    """Per-(station, purpose) random streams owned by one replication.

    Stream seeds derive deterministically from (seed, rep, purpose,
    station), so replications are independent and reproducible.  At a
    service completion the fresh service variate is drawn before the
    routing decision; this order is part of the reproducibility contract.
    """

    def __init__(self, scaled: ScaledNetwork, seed: int, rep: int = 0,
                 block: int = 8192):
        spec = scaled.spec
        self.seed = seed
        self.rep = rep
        self.arrival = [
            _VariateStream(d, seed, (rep, 1, j), block) if d is not None else None
            for j, d in enumerate(spec.arrival)]
        self.service = [
            _VariateStream(d, seed, (rep, 0, j), block)
            for j, d in enumerate(spec.service)]
        self.routing = [
            _RouteStream(spec.routing.p[j], seed, (rep, 2, j), block)
            for j in range(spec.n_stations)]


# ---------------------------------------------------------------------------
# state and single-step reference path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimState:
    """Snapshot of (Z, R_e, R_s) at clock t.

    ``r_e[j]`` is ``inf`` where the station has no external source.  While
    ``z[j] == 0`` the coordinate ``r_s[j]`` holds the (frozen) service time
    of the next job to be processed there.
    """

    z: tuple[int, ...]
    r_e: tuple[float, ...]
    r_s: tuple[float, ...]
    t: float


@dataclass(frozen=True)
class JumpRecord:
    """One jump: its pre-jump state plus the payload installed by the jump.

    The post-jump state is reconstructible exactly: an external arrival at
    station j adds one job and installs ``variate / alpha_j`` as the new
    residual interarrival time; a completion at j removes one job, adds it
    at ``routed_to`` (or drops it on exit), and installs
    ``variate / mu_j`` as the new residual service time.  Stations are
    0-indexed here.
    """

    kind: int
    station: int
    pre_state: SimState
    variate: float
    routed_to: Optional[int]
    clock: float


def apply_jump(scaled: ScaledNetwork, rec: JumpRecord) -> SimState:
    """Reconstruct the post-jump state from a record."""
    pre = rec.pre_state
    z = list(pre.z)
    r_e = list(pre.r_e)
    r_s = list(pre.r_s)
    j = rec.station
    if rec.kind == KIND_ARRIVAL:
        z[j] += 1
        r_e[j] = pre.r_e[j] + rec.variate / scaled.alpha[j]
    else:
        z[j] -= 1
        if rec.routed_to is not None:
            z[rec.routed_to] += 1
        r_s[j] = pre.r_s[j] + rec.variate / scaled.mu[j]
    return SimState(z=tuple(z), r_e=tuple(r_e), r_s=tuple(r_s), t=rec.clock)


def initial_state(scaled: ScaledNetwork, erng: EngineRng) -> SimState:
    """Empty network with fresh residuals: Z = 0, each R_e ~ T_e/alpha,
    each R_s ~ T_s/mu (next-job convention)."""
    n = scaled.n_stations
    r_e = tuple(
        erng.arrival[j].draw() / scaled.alpha[j] if erng.arrival[j] is not None else _INF
        for j in range(n))
    r_s = tuple(erng.service[j].draw() / scaled.mu[j] for j in range(n))
    return SimState(z=(0,) * n, r_e=r_e, r_s=r_s, t=0.0)


def step(state: SimState, scaled: ScaledNetwork, erng: EngineRng
         ) -> tuple[SimState, JumpRecord]:
    """Advance to the next jump; returns the new state and the jump record.

    The next event is the minimum over active clocks (all residual
    interarrival times, plus residual service times of busy stations);
    ties break as completion-before-arrival, then ascending station.
    """
    n = scaled.n_stations
    best = None
    for j in range(n):
        if state.z[j] > 0:
            key = (state.r_s[j], 0, j)
            if best is None or key < best:
                best = key
    for j in range(n):
        if state.r_e[j] != _INF:
            key = (state.r_e[j], 1, j)
            if best is None or key < best:
                best = key
    if best is None:
        raise AssertionError("no active event: empty network without sources")
    delta, tie, j = best
    t_new = state.t + delta
    z = list(state.z)
    r_e = [x if x == _INF else x - delta for x in state.r_e]
    r_s = [state.r_s[i] - delta if state.z[i] > 0 else state.r_s[i] for i in range(n)]
    pre = SimState(z=tuple(z), r_e=tuple(r_e), r_s=tuple(r_s), t=t_new)
    if tie == 0:
        variate = erng.service[j].draw()
        dest = erng.routing[j].draw()
        routed: Optional[int] = dest if dest < n else None
        z[j] -= 1
        r_s[j] += variate / scaled.mu[j]
        if routed is not None:
            z[routed] += 1
        rec = JumpRecord(KIND_COMPLETION, j, pre, variate, routed, t_new)
    else:
        variate = erng.arrival[j].draw()
        z[j] += 1
        r_e[j] += variate / scaled.alpha[j]
        rec = JumpRecord(KIND_ARRIVAL, j, pre, variate, None, t_new)
    post = SimState(z=tuple(z), r_e=tuple(r_e), r_s=tuple(r_s), t=t_new)
    return post, rec


# ---------------------------------------------------------------------------
# chunked event stream
# ---------------------------------------------------------------------------

@dataclass
class EventChunk:
    """A block of consecutive events with their pre-jump states.

    Each row describes the inter-event segment that ends at the event
    (length ``dt``; during it ``z`` is constant and every active residual
    decreases at slope 1 toward its pre-jump value) plus the jump payload.
    ``kind == -1`` marks the terminal row that closes the measurement
    window without a jump.
    """

    t: np.ndarray
    dt: np.ndarray
    z: np.ndarray
    re: np.ndarray
    rs: np.ndarray
    busy: np.ndarray
    kind: np.ndarray
    station: np.ndarray
    variate: np.ndarray
    route: np.ndarray
    batch: np.ndarray
    active_e: np.ndarray  # (J,) bool, alpha > 0
    _post: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    _jump_rows: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.t.size

    @property
    def jump_rows(self) -> np.ndarray:
        if self._jump_rows is None:
            self._jump_rows = np.nonzero(self.kind >= 0)[0]
        return self._jump_rows

    def post_states(self, scaled: ScaledNetwork
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Post-jump (z, re, rs) for every row (terminal rows unchanged)."""
        if self._post is None:
            z2 = self.z.copy()
            re2 = self.re.copy()
            rs2 = self.rs.copy()
            arr = np.nonzero(self.kind == KIND_ARRIVAL)[0]
            if arr.size:
                st = self.station[arr]
                alpha = np.asarray(scaled.alpha)
                z2[arr, st] += 1.0
                re2[arr, st] = self.re[arr, st] + self.variate[arr] / alpha[st]
            comp = np.nonzero(self.kind == KIND_COMPLETION)[0]
            if comp.size:
                st = self.station[comp]
                mu = np.asarray(scaled.mu)
                z2[comp, st] -= 1.0
                rs2[comp, st] = self.rs[comp, st] + self.variate[comp] / mu[st]
                routed = comp[self.route[comp] >= 0]
                if routed.size:
                    z2[routed, self.route[routed]] += 1.0
            self._post = (z2, re2, rs2)
        return self._post


@dataclass(frozen=True)
class RunConfig:
    horizon: float
    warmup_frac: float = 0.2
    n_batches: int = 32
    seed: int = 0
    rep: int = 0
    thin: int = 0
    confidence: float = 0.95
    chunk_size: int = 65536
    rng_block: int = 8192

    def __post_init__(self) -> None:
        if not (self.horizon > 0.0):
            raise ValueError("horizon must be positive")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ValueError("warmup fraction must be in [0,1)")
        if self.n_batches < 2:
            raise ValueError("need at least two batches")


@dataclass
class PalmSampleSet:
    """Per event type: counts, rates, and optionally thinned jump records."""

    window: float
    counts: np.ndarray          # (2, J)
    thin: int
    records: dict[tuple[int, int], dict[str, np.ndarray]]

    @property
    def rates(self) -> np.ndarray:
        return self.counts / self.window


@dataclass
class RunResult:
    scaled: ScaledNetwork
    cfg: RunConfig
    t_warm: float
    t_end: float
    batch_len: float
    counts: np.ndarray              # (2, J) events in window
    batch_counts: np.ndarray        # (2, J, B)
    integrals: dict                 # name -> (total, batch_totals, exact)
    event_sums: dict                # name -> ((2,J) sums, (2,J,B) batch sums)
    jump_sums: dict                 # name -> ((2,J) sums, (B,) batch totals)
    palm: PalmSampleSet
    corr_stats: dict                # (kind, station) -> accumulator dict
    z_start: np.ndarray
    z_end: np.ndarray
    ext_arrivals: np.ndarray        # (J,)
    routed_in: np.ndarray           # (J,)
    departures: np.ndarray          # (J,)
    n_events: int
    samples: dict = field(default_factory=dict)

    @property
    def window(self) -> float:
        return self.t_end - self.t_warm

    def _provenance(self) -> dict:
        return {"spec_hash": spec_hash(self.scaled.spec), "seed": self.cfg.seed}

    def time_average(self, name: str) -> MomentReport:
        """Batch-means report for a registered time-integral functional."""
        total, batch_totals, exact = self.integrals[name]
        bm = batch_totals / self.batch_len
        mean, hw = batch_means_ci(bm, self.cfg.confidence)
        half = bm[: max(1, bm.size // 2)]
        return MomentReport(
            name=name, estimate=float(total / self.window), half_width=hw,
            confidence=self.cfg.confidence, n_batches=bm.size,
            batch_means=tuple(float(x) for x in bm),
            first_half_estimate=float(half.mean()),
            warmup_time=self.t_warm, horizon=self.t_end,
            exact_quadrature=exact, **self._provenance())

    def event_average(self, name: str, kind: int, station: int) -> tuple[float, int]:
        """Mean of a registered event statistic over one event type."""
        sums, _ = self.event_sums[name]
        c = int(self.counts[kind, station])
        return (float(sums[kind, station]) / c if c else 0.0), c

    def event_average_sum(self, name: str, types: list[tuple[int, int]],
                          ) -> MomentReport:
        """Sum over event types of per-type event averages, with a
        batch-means interval for the sum; batches missing events of any
        requested type are dropped."""
        sums, batch_sums = self.event_sums[name]
        bc = self.batch_counts
        b = self.cfg.n_batches
        est = 0.0
        n_types = 0
        for kind, st in types:
            c = int(self.counts[kind, st])
            if c:
                est += float(sums[kind, st]) / c
                n_types += 1
        est = float(est)
        per_batch = np.zeros(b)
        ok = np.ones(b, dtype=bool)
        for kind, st in types:
            if int(self.counts[kind, st]) == 0:
                continue
            cnt = bc[kind, st]
            ok &= cnt > 0
            with np.errstate(invalid="ignore", divide="ignore"):
                per_batch += np.where(cnt > 0, batch_sums[kind, st] / np.maximum(cnt, 1), 0.0)
        bm = per_batch[ok]
        _, hw = batch_means_ci(bm, self.cfg.confidence) if bm.size >= 2 else (est, math.inf)
        half = bm[: max(1, bm.size // 2)] if bm.size else np.array([est])
        return MomentReport(
            name=name, estimate=est, half_width=hw, confidence=self.cfg.confidence,
            n_batches=int(bm.size), batch_means=tuple(float(x) for x in bm),
            first_half_estimate=float(half.mean()), warmup_time=self.t_warm,
            horizon=self.t_end, exact_quadrature=True, **self._provenance())

    def rate_report(self, kind: int, station: int) -> MomentReport:
        """Event rate of one type with a batch-means interval."""
        bm = self.batch_counts[kind, station] / self.batch_len
        mean, hw = batch_means_ci(bm, self.cfg.confidence)
        half = bm[: max(1, bm.size // 2)]
        name = f"rate[{'completion' if kind == KIND_COMPLETION else 'arrival'},{station + 1}]"
        return MomentReport(
            name=name, estimate=float(self.counts[kind, station] / self.window),
            half_width=hw, confidence=self.cfg.confidence, n_batches=bm.size,
            batch_means=tuple(float(x) for x in bm),
            first_half_estimate=float(half.mean()), warmup_time=self.t_warm,
            horizon=self.t_end, **self._provenance())

    def jump_term_total(self, name: str) -> float:
        """(1/T) * sum of jump differences over all events in the window."""
        sums, _ = self.jump_sums[name]
        return float(sums.sum()) / self.window

    def correlations(self, kind: int, station: int) -> list[tuple[str, float, int]]:
        """Sample correlations between the variate installed at jumps of
        one type and each pre-jump state coordinate (skipping degenerate
        coordinates)."""
        acc = self.corr_stats.get((kind, station))
        out: list[tuple[str, float, int]] = []
        if acc is None or acc["n"] < 3:
            return out
        n = acc["n"]
        var_t = acc["tt"] / n - (acc["t"] / n) ** 2
        for label, sx, sxx, sxt in zip(acc["labels"], acc["x"], acc["xx"], acc["xt"]):
            var_x = sxx / n - (sx / n) ** 2
            if var_t <= 1e-18 or var_x <= 1e-18:
                continue
            cov = sxt / n - (acc["t"] / n) * (sx / n)
            out.append((label, float(cov / math.sqrt(var_t * var_x)), int(n)))
        return out


# ---------------------------------------------------------------------------
# chunk consumers
# ---------------------------------------------------------------------------

class _TimeIntegralAcc:
    def __init__(self, name: str, integrand, n_batches: int):
        if not hasattr(integrand, "segment_integrals"):
            raise TypeError(
                f"functional {name!r} cannot be integrated along segments; "
                "register an object with declared along-segment degree")
        self.name = name
        self.f = integrand
        self.total = 0.0
        self.batch = np.zeros(n_batches)

    def consume(self, chunk: EventChunk) -> None:
        vals = self.f.segment_integrals(chunk)
        self.total += float(vals.sum())
        self.batch += np.bincount(chunk.batch, weights=vals, minlength=self.batch.size)


class _EventStatAcc:
    def __init__(self, name: str, func, n_batches: int, n_stations: int):
        self.name = name
        self.f = func
        self.sums = np.zeros((2, n_stations))
        self.batch = np.zeros((2, n_stations, n_batches))
        self.b = n_batches
        self.j = n_stations

    def consume(self, chunk: EventChunk) -> None:
        rows = chunk.jump_rows
        if not rows.size:
            return
        vals = self.f.value_chunk(chunk.z[rows], chunk.re[rows], chunk.rs[rows])
        idx = (chunk.kind[rows].astype(np.int64) * self.j
               + chunk.station[rows]) * self.b + chunk.batch[rows]
        flat = np.bincount(idx, weights=vals, minlength=2 * self.j * self.b)
        self.batch += flat.reshape(2, self.j, self.b)
        self.sums = self.batch.sum(axis=2)


class _JumpSumAcc:
    def __init__(self, name: str, func, scaled: ScaledNetwork, n_batches: int):
        self.name = name
        self.f = func
        self.scaled = scaled
        j = scaled.n_stations
        self.sums = np.zeros((2, j))
        self.batch = np.zeros(n_batches)
        self.j = j

    def consume(self, chunk: EventChunk) -> None:
        rows = chunk.jump_rows
        if not rows.size:
            return
        z2, re2, rs2 = chunk.post_states(self.scaled)
        delta = (self.f.value_chunk(z2[rows], re2[rows], rs2[rows])
                 - self.f.value_chunk(chunk.z[rows], chunk.re[rows], chunk.rs[rows]))
        type_idx = chunk.kind[rows].astype(np.int64) * self.j + chunk.station[rows]
        self.sums += np.bincount(type_idx, weights=delta,
                                 minlength=2 * self.j).reshape(2, self.j)
        self.batch += np.bincount(chunk.batch[rows], weights=delta,
                                  minlength=self.batch.size)


class _PalmRecorder:
    """Keeps every ``thin``-th jump record per event type."""

    def __init__(self, thin: int, n_stations: int):
        self.thin = thin
        self.j = n_stations
        self.seen = np.zeros((2, n_stations), dtype=np.int64)
        self.parts: dict[tuple[int, int], list[dict[str, np.ndarray]]] = {}

    def consume(self, chunk: EventChunk) -> None:
        if self.thin <= 0:
            return
        rows = chunk.jump_rows
        for kind in (0, 1):
            for st in range(self.j):
                m = rows[(chunk.kind[rows] == kind) & (chunk.station[rows] == st)]
                if not m.size:
                    continue
                seen = self.seen[kind, st]
                # global event ordinals for this type, keep multiples of thin
                ordinals = seen + np.arange(m.size)
                keep = m[ordinals % self.thin == 0]
                self.seen[kind, st] = seen + m.size
                if keep.size:
                    self.parts.setdefault((kind, st), []).append({
                        "clock": chunk.t[keep].copy(),
                        "variate": chunk.variate[keep].copy(),
                        "route": chunk.route[keep].copy(),
                        "z": chunk.z[keep].copy(),
                        "re": chunk.re[keep].copy(),
                        "rs": chunk.rs[keep].copy(),
                    })

    def finalize(self) -> dict[tuple[int, int], dict[str, np.ndarray]]:
        out = {}
        for key, parts in self.parts.items():
            out[key] = {col: np.concatenate([p[col] for p in parts])
                        for col in parts[0]}
        return out


class _CorrAcc:
    """Streaming sums for corr(installed variate, pre-jump coordinates)."""

    def __init__(self, scaled: ScaledNetwork):
        j = scaled.n_stations
        self.j = j
        labels = ([f"z{i + 1}" for i in range(j)]
                  + [f"re{i + 1}" for i in range(j)]
                  + [f"rs{i + 1}" for i in range(j)])
        self.active_e = [a > 0 for a in scaled.alpha]
        self.acc = {}
        for kind in (0, 1):
            for st in range(j):
                if kind == KIND_ARRIVAL and not self.active_e[st]:
                    continue
                self.acc[(kind, st)] = {
                    "labels": labels, "n": 0, "t": 0.0, "tt": 0.0,
                    "x": np.zeros(3 * j), "xx": np.zeros(3 * j),
                    "xt": np.zeros(3 * j)}

    def consume(self, chunk: EventChunk) -> None:
        rows = chunk.jump_rows
        if not rows.size:
            return
        coords = np.concatenate([chunk.z[rows], chunk.re[rows], chunk.rs[rows]], axis=1)
        coords = np.where(np.isfinite(coords), coords, 0.0)
        tvals = chunk.variate[rows]
        kinds = chunk.kind[rows]
        stations = chunk.station[rows]
        for (kind, st), a in self.acc.items():
            m = (kinds == kind) & (stations == st)
            if not m.any():
                continue
            tv = tvals[m]
            cx = coords[m]
            a["n"] += tv.size
            a["t"] += float(tv.sum())
            a["tt"] += float((tv * tv).sum())
            a["x"] += cx.sum(axis=0)
            a["xx"] += (cx * cx).sum(axis=0)
            a["xt"] += (cx * tv[:, None]).sum(axis=0)


class _SpacedSampler:
    """Queue snapshots on a deterministic time grid of pitch ``spacing``.

    Each grid point takes the queue vector of the inter-event segment
    covering it (the queue is constant between events), which samples the
    time-stationary law directly; sampling at event epochs instead would
    length-bias the covering gap.  The grid starts one pitch after the
    warmup boundary."""

    def __init__(self, spacing: float):
        self.spacing = spacing
        self.next_t: Optional[float] = None
        self.rows: list[np.ndarray] = []

    def consume(self, chunk: EventChunk) -> None:
        if not chunk.n_rows:
            return
        seg_end = chunk.t
        if self.next_t is None:
            self.next_t = float(seg_end[0] - chunk.dt[0]) + self.spacing
        hi = float(seg_end[-1])
        if self.next_t > hi:
            return
        grid = np.arange(self.next_t, hi, self.spacing)
        grid = grid[grid <= hi]
        if not grid.size:
            return
        rows = np.searchsorted(seg_end, grid, side="left")
        rows = np.minimum(rows, chunk.n_rows - 1)
        # only grid points actually inside this chunk's covered span
        ok = grid > seg_end[rows] - chunk.dt[rows] - 1e-12
        self.rows.append(chunk.z[rows[ok]].astype(np.int64))
        self.next_t = float(grid[-1]) + self.spacing

    def samples(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 0), dtype=np.int64)
        return np.concatenate(self.rows, axis=0)


# ---------------------------------------------------------------------------
# the fast loop
# ---------------------------------------------------------------------------

def run(scaled: ScaledNetwork, cfg: RunConfig,
        time_integrands: dict | None = None,
        event_stats: dict | None = None,
        jump_functions: dict | None = None,
        sample_spacings: dict | None = None,
        ) -> RunResult:
    """Simulate one replication over ``[0, horizon]``.

    The warmup prefix ``[0, warmup_frac * horizon]`` is simulated but not
    measured.  ``time_integrands`` accumulate exact time integrals over the
    window, ``event_stats`` accumulate pre-jump sums per event type, and
    ``jump_functions`` accumulate jump differences f(post) - f(pre) per
    event type (the raw-sum side of the stationarity identity).
    ``sample_spacings`` maps sampler names to minimum time spacings;
    each sampler retains pre-jump queue snapshots at external-arrival
    epochs at least that far apart.
    """
    time_integrands = time_integrands or {}
    event_stats = event_stats or {}
    jump_functions = jump_functions or {}
    sample_spacings = sample_spacings or {}

    n = scaled.n_stations
    b = cfg.n_batches
    t_end = cfg.horizon
    t_warm = cfg.horizon * cfg.warmup_frac
    batch_len = (t_end - t_warm) / b
    erng = EngineRng(scaled, cfg.seed, cfg.rep, cfg.rng_block)
    alpha = scaled.alpha
    mu = scaled.mu

    consumers = []
    t_accs = {name: _TimeIntegralAcc(name, f, b) for name, f in time_integrands.items()}
    e_accs = {name: _EventStatAcc(name, f, b, n) for name, f in event_stats.items()}
    j_accs = {name: _JumpSumAcc(name, f, scaled, b) for name, f in jump_functions.items()}
    consumers.extend(t_accs.values())
    consumers.extend(e_accs.values())
    consumers.extend(j_accs.values())
    palm_rec = _PalmRecorder(cfg.thin, n)
    consumers.append(palm_rec)
    corr = _CorrAcc(scaled)
    consumers.append(corr)
    samplers = {name: _SpacedSampler(sp) for name, sp in sample_spacings.items()}
    consumers.extend(samplers.values())

    active_e = np.array([a > 0 for a in alpha])

    # --- mutable simulation state (locals for speed) ---
    state0 = initial_state(scaled, erng)
    z = list(state0.z)
    arr_abs = [state0.r_e[j] if active_e[j] else _INF for j in range(n)]
    svc_frozen = list(state0.r_s)
    svc_abs = [0.0] * n  # valid only while busy
    heap: list[tuple[float, int, int]] = []
    for j in range(n):
        if active_e[j]:
            heappush(heap, (arr_abs[j], 1, j))
    if not heap:
        raise AssertionError("no active event sources")

    arr_streams = erng.arrival
    svc_streams = erng.service
    route_streams = erng.routing
    inv_batch = 1.0 / batch_len

    # per-event columns
    cols_t: list[float] = []
    cols_dt: list[float] = []
    cols_kind: list[int] = []
    cols_station: list[int] = []
    cols_variate: list[float] = []
    cols_route: list[int] = []
    cols_z = [[] for _ in range(n)]
    cols_re = [[] for _ in range(n)]
    cols_rs = [[] for _ in range(n)]

    counts = np.zeros((2, n), dtype=np.int64)
    batch_counts = np.zeros((2, n, b), dtype=np.int64)
    ext_arrivals = np.zeros(n, dtype=np.int64)
    routed_in = np.zeros(n, dtype=np.int64)
    departures = np.zeros(n, dtype=np.int64)
    z_start: Optional[np.ndarray] = None
    n_events = 0

    def flush() -> None:
        nonlocal cols_t, cols_dt, cols_kind, cols_station, cols_variate, cols_route
        nonlocal cols_z, cols_re, cols_rs, z_start
        if not cols_t:
            return
        t_arr = np.asarray(cols_t)
        zmat = np.column_stack([np.asarray(c, dtype=float) for c in cols_z])
        chunk = EventChunk(
            t=t_arr,
            dt=np.asarray(cols_dt),
            z=zmat,
            re=np.column_stack([np.asarray(c) for c in cols_re]),
            rs=np.column_stack([np.asarray(c) for c in cols_rs]),
            busy=zmat > 0.0,
            kind=np.asarray(cols_kind, dtype=np.int8),
            station=np.asarray(cols_station, dtype=np.int64),
            variate=np.asarray(cols_variate),
            route=np.asarray(cols_route, dtype=np.int64),
            batch=np.minimum((t_arr - t_warm) * inv_batch, b - 1).astype(np.int64),
            active_e=active_e,
        )
        if z_start is None and chunk.n_rows:
            z_start = chunk.z[0].astype(np.int64)
        rows = chunk.jump_rows
        if rows.size:
            ti = chunk.kind[rows].astype(np.int64) * n + chunk.station[rows]
            flat = np.bincount(ti * b + chunk.batch[rows], minlength=2 * n * b)
            batch_counts.reshape(-1)[:] += flat
            arr_rows = rows[chunk.kind[rows] == KIND_ARRIVAL]
            comp_rows = rows[chunk.kind[rows] == KIND_COMPLETION]
            ext_arrivals[:] += np.bincount(chunk.station[arr_rows], minlength=n)
            departures[:] += np.bincount(chunk.station[comp_rows], minlength=n)
            rin = chunk.route[comp_rows]
            rin = rin[rin >= 0]
            routed_in[:] += np.bincount(rin, minlength=n)
        for c in consumers:
            c.consume(chunk)
        cols_t = []
        cols_dt = []
        cols_kind = []
        cols_station = []
        cols_variate = []
        cols_route = []
        cols_z = [[] for _ in range(n)]
        cols_re = [[] for _ in range(n)]
        cols_rs = [[] for _ in range(n)]

    chunk_size = cfg.chunk_size
    t = 0.0
    while heap:
        te, tie, j = heappop(heap)
        if te > t_end:
            heappush(heap, (te, tie, j))
            break
        record = te > t_warm
        if record:
            seg_from = t if t > t_warm else t_warm
            cols_t.append(te)
            cols_dt.append(te - seg_from)
            for i in range(n):
                zi = z[i]
                cols_z[i].append(zi)
                cols_re[i].append(arr_abs[i] - te if active_e[i] else _INF)
                cols_rs[i].append(svc_abs[i] - te if zi > 0 else svc_frozen[i])
        t = te
        if tie == 0:
            # service completion at j
            variate = svc_streams[j].draw()
            dest = route_streams[j].draw()
            zj = z[j] - 1
            z[j] = zj
            if zj > 0:
                nxt = te + variate / mu[j]
                svc_abs[j] = nxt
                heappush(heap, (nxt, 0, j))
            else:
                svc_frozen[j] = variate / mu[j]
            if dest < n:
                zd = z[dest] + 1
                z[dest] = zd
                if zd == 1:
                    nxt = te + svc_frozen[dest]
                    svc_abs[dest] = nxt
                    heappush(heap, (nxt, 0, dest))
            if record:
                cols_kind.append(0)
                cols_station.append(j)
                cols_variate.append(variate)
                cols_route.append(dest if dest < n else -1)
                counts[0, j] += 1
        else:
            # external arrival at j
            variate = arr_streams[j].draw()
            nxt = te + variate / alpha[j]
            arr_abs[j] = nxt
            heappush(heap, (nxt, 1, j))
            zj = z[j] + 1
            z[j] = zj
            if zj == 1:
                svc_nxt = te + svc_frozen[j]
                svc_abs[j] = svc_nxt
                heappush(heap, (svc_nxt, 0, j))
            if record:
                cols_kind.append(1)
                cols_station.append(j)
                cols_variate.append(variate)
                cols_route.append(-2)
                counts[1, j] += 1
        if record:
            n_events += 1
            if len(cols_t) >= chunk_size:
                flush()

    # terminal segment closing the window at t_end
    seg_from = t if t > t_warm else t_warm
    cols_t.append(t_end)
    cols_dt.append(t_end - seg_from)
    cols_kind.append(-1)
    cols_station.append(-1)
    cols_variate.append(math.nan)
    cols_route.append(-2)
    for i in range(n):
        cols_z[i].append(z[i])
        cols_re[i].append(arr_abs[i] - t_end if active_e[i] else _INF)
        cols_rs[i].append(svc_abs[i] - t_end if z[i] > 0 else svc_frozen[i])
    z_end = np.asarray(z, dtype=np.int64)
    flush()

    palm = PalmSampleSet(window=t_end - t_warm, counts=counts.copy(),
                         thin=cfg.thin, records=palm_rec.finalize())
    return RunResult(
        scaled=scaled, cfg=cfg, t_warm=t_warm, t_end=t_end, batch_len=batch_len,
        counts=counts, batch_counts=batch_counts.astype(float),
        integrals={name: (a.total, a.batch.copy(), getattr(a.f, "exact", True))
                   for name, a in t_accs.items()},
        event_sums={name: (a.sums.copy(), a.batch.copy()) for name, a in e_accs.items()},
        jump_sums={name: (a.sums.copy(), a.batch.copy()) for name, a in j_accs.items()},
        palm=palm, corr_stats=corr.acc,
        z_start=z_start if z_start is not None else z_end.copy(),
        z_end=z_end, ext_arrivals=ext_arrivals, routed_in=routed_in,
        departures=departures, n_events=n_events,
        samples={name: s.samples() for name, s in samplers.items()},
    )
