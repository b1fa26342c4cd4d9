"""Experiment orchestration: scale sweeps, product-form and routing-path
oracles, run manifests, and reproducible output layout.

Outputs land in ``<out>/<spec-hash12>/<subcommand>/<timestamp>/`` with a
``manifest.json`` sufficient to re-execute the run bit-identically, a
``results.csv`` whose bytes are deterministic given the manifest, and a
``report.json``.  All floating-point values in JSON and CSV are serialized
with shortest round-trip ``repr``.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bar import StatementEstimates, estimate_statements
from .engine import RunConfig, run
from .network import NetworkSpec, RoutingMatrix, ScaledNetwork, make_scaled, spec_hash
from .static_analysis import (critical_scale, hitting_matrix,
                              simulate_hitting_probability)
from .stats import (MomentReport, frepr, geometric_chisquare,
                    ks_distance_exponential, mann_kendall_increasing)
from .test_functions import QueuePower

__all__ = [
    "SweepPlan", "SweepResult", "default_horizon", "run_sweep",
    "run_sweep_from_manifest", "product_form_check", "routing_oracle",
    "random_routing", "random_open_spec", "make_out_dir", "write_json",
    "SWEEP_CSV_HEADER",
]

SWEEP_CSV_HEADER = ("r,k,n,s1,s1_hw,s2,s2_hw,s3,s3_hw,s4,s4_hw,"
                    "horizon,batches,seed,rep")
SWEEP_CSV_SCHEMA = "gjnet.sweep.v1"

H0_DEFAULT = 1.0e6


def default_horizon(r: float, h0: float = H0_DEFAULT) -> float:
    """Default schedule: horizon grows like 1/r as the bottleneck's
    relaxation time stretches (override per point for deeper stations)."""
    return h0 * (0.3 / r)


# ---------------------------------------------------------------------------
# output layout and manifests
# ---------------------------------------------------------------------------

def make_out_dir(base: Path, shash: str, subcommand: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S") + f"{time.time_ns() % 1_000_000:06d}"
    d = Path(base) / shash[:12] / subcommand / stamp
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_json(path: Path, obj: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPlan:
    """A scale sweep: descending grid below the clamped critical scale,
    per-point horizons nondecreasing as r shrinks, statements to estimate.
    """

    spec: NetworkSpec
    r_grid: tuple[float, ...]
    statements: tuple[tuple[int, float], ...]       # (k, n) pairs
    horizons: tuple[float, ...]
    moment_bound: float
    seed: int = 0
    warmup_frac: float = 0.2
    n_batches: int = 32
    reps: int = 1
    confidence: float = 0.95

    def __post_init__(self) -> None:
        if not self.r_grid:
            raise ValueError("empty scale grid")
        if len(self.horizons) != len(self.r_grid):
            raise ValueError("need one horizon per grid point")
        if any(r2 >= r1 for r1, r2 in zip(self.r_grid, self.r_grid[1:])):
            raise ValueError("scale grid must be strictly descending")
        w = hitting_matrix(self.spec.routing)
        _, r0 = critical_scale(w)
        bad = [r for r in self.r_grid if not (0.0 < r < r0)]
        if bad:
            raise ValueError(
                f"grid points {bad} are not below the clamped critical scale {r0:g}")
        if any(h2 < h1 for h1, h2 in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be nondecreasing as r decreases")
        if not self.statements:
            raise ValueError("no statements requested")

    @classmethod
    def with_default_horizons(cls, spec: NetworkSpec, r_grid: Sequence[float],
                              statements: Sequence[tuple[int, float]],
                              moment_bound: Optional[float] = None,
                              h0: float = H0_DEFAULT, **kw) -> "SweepPlan":
        return cls(spec=spec, r_grid=tuple(r_grid),
                   statements=tuple((int(k), float(n)) for k, n in statements),
                   horizons=tuple(default_horizon(r, h0) for r in r_grid),
                   moment_bound=float(moment_bound
                                      if moment_bound is not None
                                      else spec.moment_order), **kw)

    def to_manifest(self) -> dict:
        return {
            "schema": SWEEP_CSV_SCHEMA,
            "code_version": __version__,
            "spec": self.spec.to_json_dict(),
            "spec_hash": spec_hash(self.spec),
            "r_grid": [frepr(r) for r in self.r_grid],
            "horizons": [frepr(h) for h in self.horizons],
            "statements": [[k, frepr(n)] for k, n in self.statements],
            "moment_bound": frepr(self.moment_bound),
            "seed": self.seed,
            "warmup_frac": frepr(self.warmup_frac),
            "n_batches": self.n_batches,
            "reps": self.reps,
            "confidence": frepr(self.confidence),
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }

    @classmethod
    def from_manifest(cls, m: dict) -> "SweepPlan":
        return cls(
            spec=NetworkSpec.from_json_dict(m["spec"]),
            r_grid=tuple(float(r) for r in m["r_grid"]),
            statements=tuple((int(k), float(n)) for k, n in m["statements"]),
            horizons=tuple(float(h) for h in m["horizons"]),
            moment_bound=float(m["moment_bound"]),
            seed=int(m["seed"]),
            warmup_frac=float(m["warmup_frac"]),
            n_batches=int(m["n_batches"]),
            reps=int(m["reps"]),
            confidence=float(m["confidence"]))


def _sweep_point(args: tuple) -> dict:
    spec_dict, r, horizon, k, n, big_m, seed, rep0, warmup, batches, reps, conf = args
    spec = NetworkSpec.from_json_dict(spec_dict)
    scaled = make_scaled(spec, r)
    cfg = RunConfig(horizon=horizon, warmup_frac=warmup, n_batches=batches,
                    seed=seed, rep=rep0, confidence=conf)
    est = estimate_statements(scaled, k, n, big_m, cfg, reps=reps)
    return {
        "r": r, "k": k, "n": n, "horizon": horizon, "seed": seed, "rep": rep0,
        "batches": batches,
        "s1": est.s1.estimate, "s1_hw": est.s1.half_width,
        "s2": est.s2.estimate, "s2_hw": est.s2.half_width,
        "s3": est.s3.estimate, "s3_hw": est.s3.half_width,
        "s4": est.s4.estimate, "s4_hw": est.s4.half_width,
    }


@dataclass
class SweepResult:
    plan: SweepPlan
    rows: list[dict]
    summary: dict

    def csv_text(self) -> str:
        lines = [SWEEP_CSV_HEADER]
        for row in self.rows:
            lines.append(",".join([
                frepr(row["r"]), str(row["k"]), frepr(row["n"]),
                frepr(row["s1"]), frepr(row["s1_hw"]),
                frepr(row["s2"]), frepr(row["s2_hw"]),
                frepr(row["s3"]), frepr(row["s3_hw"]),
                frepr(row["s4"]), frepr(row["s4_hw"]),
                frepr(row["horizon"]), str(row["batches"]),
                str(row["seed"]), str(row["rep"])]))
        return "\n".join(lines) + "\n"


_GNUPLOT_TEMPLATE = """\
# gnuplot script for sweep results (run: gnuplot plot.gp)
set datafile separator ','
set logscale x
set xlabel 'scale r'
set ylabel 'scaled queue moment estimate'
set key outside
plot for [kk in "{ks}"] 'results.csv' \\
    using (column('r')):(column('k') == kk + 0 ? column('s1') : 1/0) \\
    with linespoints title 'k='.kk
"""


def run_sweep(plan: SweepPlan, out_dir: Optional[Path] = None,
              jobs: int = 1) -> SweepResult:
    """Execute a sweep; one row per (r, k, n), plus a per-(k, n) summary
    with the max/min ratio and the one-sided increasing-trend p-value over
    the grid ordered from largest to smallest r."""
    tasks = []
    rep_counter = 0
    for r, horizon in zip(plan.r_grid, plan.horizons):
        for k, n in plan.statements:
            tasks.append((plan.spec.to_json_dict(), r, horizon, k, n,
                          plan.moment_bound, plan.seed, rep_counter,
                          plan.warmup_frac, plan.n_batches, plan.reps,
                          plan.confidence))
            rep_counter += plan.reps
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    summary: dict = {"per_statement": []}
    for k, n in plan.statements:
        vals = [row["s1"] for row in rows if row["k"] == k and row["n"] == n]
        ratio = max(vals) / min(vals) if min(vals) > 0 else math.inf
        s, p = mann_kendall_increasing(vals)
        summary["per_statement"].append({
            "k": k, "n": frepr(n),
            "s1_by_r": [frepr(v) for v in vals],
            "max_min_ratio": frepr(ratio),
            "mk_statistic": s,
            "mk_increasing_p": frepr(p),
        })
    result = SweepResult(plan=plan, rows=rows, summary=summary)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "manifest.json", plan.to_manifest())
        _write_text_atomic(out_dir / "results.csv", result.csv_text())
        write_json(out_dir / "report.json", {
            "schema": SWEEP_CSV_SCHEMA, "summary": summary,
            "spec_hash": spec_hash(plan.spec)})
        ks = " ".join(str(k) for k in sorted({k for k, _ in plan.statements}))
        _write_text_atomic(out_dir / "plot.gp", _GNUPLOT_TEMPLATE.format(ks=ks))
    return result


def run_sweep_from_manifest(manifest_path: Path, out_dir: Optional[Path] = None,
                            jobs: int = 1) -> SweepResult:
    m = json.loads(Path(manifest_path).read_text())
    return run_sweep(SweepPlan.from_manifest(m), out_dir=out_dir, jobs=jobs)


# ---------------------------------------------------------------------------
# product-form oracle
# ---------------------------------------------------------------------------

def _mixing_spacing(scaled: ScaledNetwork, j: int, c: float = 3.0) -> float:
    """Sampling spacing of a few relaxation times for station j, from the
    diffusion scale sigma^2 / (mu - lam)^2 with a crude variability factor."""
    sigma2 = scaled.lam[j] * (2.0 + scaled.spec.service[j].scv())
    delta = scaled.mu[j] - scaled.lam[j]
    return c * sigma2 / delta**2


@dataclass(frozen=True)
class ProductFormStation:
    station: int
    scaled_mean: MomentReport      # time average of r^j Z_j
    target: float                  # lambda_j (exact identity when Jackson)
    n_samples: int
    chi2_p: Optional[float]        # Jackson branch only
    ks_distance: Optional[float]   # qualitative branch only


@dataclass(frozen=True)
class ProductFormReport:
    exact_branch: bool
    r: float
    stations: tuple[ProductFormStation, ...]

    @property
    def passed(self) -> bool:
        if not self.exact_branch:
            return True
        return all(s.scaled_mean.contains(s.target) and
                   (s.chi2_p is None or s.chi2_p > 0.001)
                   for s in self.stations)

    def to_json_dict(self) -> dict:
        return {
            "exact_branch": self.exact_branch,
            "r": frepr(self.r),
            "passed": self.passed,
            "stations": [{
                "station": s.station,
                "scaled_mean": s.scaled_mean.to_json_dict(),
                "target": frepr(s.target),
                "n_samples": s.n_samples,
                "chi2_p": frepr(s.chi2_p) if s.chi2_p is not None else None,
                "ks_distance": (frepr(s.ks_distance)
                                if s.ks_distance is not None else None),
            } for s in self.stations],
        }


def product_form_check(spec: NetworkSpec, r: float, cfg: RunConfig,
                       confidence: float = 0.99) -> ProductFormReport:
    """Check per-station marginals against the memoryless product form.

    Exact branch (all streams exponential): the scaled mean queue r^j Z_j
    must match lambda_j (an exact identity for the geometric marginal) and
    the sampled marginal must fit Geometric(rho_j) by chi-square.  The
    qualitative branch reports the Kolmogorov-Smirnov distance of the
    scaled marginal to the exponential with matched mean, with no
    threshold.  Marginals are sampled on a per-station deterministic time
    grid several relaxation times apart, so the samples follow the
    time-stationary law and are approximately independent.
    """
    scaled = make_scaled(spec, r)
    exact = all(d is None or d.family.value == "Exponential" for d in spec.arrival) \
        and all(d.family.value == "Exponential" for d in spec.service)
    j = spec.n_stations
    integrands = {f"m{i}": QueuePower(scaled, i, 1.0) for i in range(1, j + 1)}
    spacings = {f"st{i}": _mixing_spacing(scaled, i - 1) for i in range(1, j + 1)}
    cfg = RunConfig(horizon=cfg.horizon, warmup_frac=cfg.warmup_frac,
                    n_batches=cfg.n_batches, seed=cfg.seed, rep=cfg.rep,
                    confidence=confidence, chunk_size=cfg.chunk_size,
                    rng_block=cfg.rng_block)
    res = run(scaled, cfg, time_integrands=integrands, sample_spacings=spacings)
    stations = []
    for i in range(1, j + 1):
        samples = res.samples[f"st{i}"]
        zi = samples[:, i - 1] if samples.size else np.zeros(0, dtype=np.int64)
        chi_p = None
        ksd = None
        if exact:
            _, chi_p, _ = geometric_chisquare(zi, scaled.rho[i - 1])
        else:
            ksd = ks_distance_exponential(zi.astype(float) * r**i)
        stations.append(ProductFormStation(
            station=i, scaled_mean=res.time_average(f"m{i}"),
            target=scaled.lam[i - 1], n_samples=int(zi.size),
            chi2_p=chi_p, ks_distance=ksd))
    return ProductFormReport(exact_branch=exact, r=r, stations=tuple(stations))


# ---------------------------------------------------------------------------
# routing-path oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoutingOracleRow:
    j: int
    k: int
    analytic: float
    estimate: float
    stderr: float
    z_score: float


def routing_oracle(routing: RoutingMatrix, n_paths: int, seed: int,
                   pairs: Optional[Sequence[tuple[int, int]]] = None,
                   ) -> list[RoutingOracleRow]:
    """Monte Carlo routing paths versus the exact hitting probabilities.

    The z-score uses the binomial null standard error at the analytic
    probability, so exact zeros and ones score zero when they agree.
    """
    if n_paths < 1000:
        raise ValueError("use at least 1000 paths")
    w = hitting_matrix(routing)
    n = routing.n_stations
    if pairs is None:
        pairs = [(j, k) for j in range(1, n + 1) for k in range(1, n + 1)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    rows = []
    for j, k in pairs:
        est, se_emp = simulate_hitting_probability(routing, j, k, n_paths, rng)
        p = float(w[j - 1, k - 1])
        se_null = math.sqrt(p * (1.0 - p) / n_paths)
        diff = est - p
        if se_null == 0.0:
            z = 0.0 if diff == 0.0 else math.inf
        else:
            z = diff / se_null
        rows.append(RoutingOracleRow(j=j, k=k, analytic=p, estimate=est,
                                     stderr=se_emp, z_score=z))
    return rows


# ---------------------------------------------------------------------------
# random open networks (test/verification corpora)
# ---------------------------------------------------------------------------

def random_routing(rng: np.random.Generator, n: int,
                   max_radius: float = 0.95, row_sum_hi: float = 0.9,
                   zero_frac: float = 0.3) -> RoutingMatrix:
    """Random substochastic routing matrix with spectral radius < max_radius."""
    for _ in range(200):
        p = rng.random((n, n))
        p[rng.random((n, n)) < zero_frac] = 0.0
        sums = p.sum(axis=1)
        targets = rng.uniform(0.2, row_sum_hi, size=n)
        scale = np.where(sums > 0, targets / np.maximum(sums, 1e-300), 0.0)
        p = p * scale[:, None]
        radius = max(abs(np.linalg.eigvals(p)))
        if radius < max_radius:
            return RoutingMatrix.from_rows(p.tolist())
    raise AssertionError("failed to draw an open routing matrix")


def random_open_spec(rng: np.random.Generator, n: Optional[int] = None,
                     moment_order: float = 2.0) -> NetworkSpec:
    """Random open network with external arrivals at every station."""
    from .distributions import erlang, exponential, hyperexp2, uniform_0_2
    if n is None:
        n = int(rng.integers(2, 5))
    routing = random_routing(rng, n)
    alpha = tuple(float(a) for a in rng.uniform(0.2, 1.0, size=n))
    dists = [exponential(), erlang(2), hyperexp2(0.4, 3.0), uniform_0_2()]
    arrival = tuple(dists[int(rng.integers(0, len(dists)))] for _ in range(n))
    service = tuple(dists[int(rng.integers(0, len(dists)))] for _ in range(n))
    return NetworkSpec(alpha=alpha, routing=routing, arrival=arrival,
                       service=service, moment_order=moment_order)
