"""Command-line interface.

Subcommands: ``analyze``, ``simulate``, ``verify-bar``, ``statements``,
``sweep``, ``product-form``, ``routing-oracle``.  Exit codes: 0 on success,
2 on validation errors (bad spec, bad flags, out-of-range grid), 3 on a
statistical failure (stationarity residual or oracle mismatch).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bar import estimate_statements, residual_moments, verify_bar_suite
from .engine import KIND_ARRIVAL, KIND_COMPLETION, RunConfig, run
from .experiments import (SweepPlan, default_horizon, make_out_dir,
                          product_form_check, routing_oracle,
                          run_sweep, run_sweep_from_manifest, write_json)
from .network import NetworkSpec, NetworkValidationError, make_scaled, spec_hash
from .static_analysis import critical_scale, drift_margin, heavy_traffic_profile
from .test_functions import QueuePower, parse_selector

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STATISTICAL = 3


class ValidationFailure(Exception):
    pass


def _load_spec(path: str) -> NetworkSpec:
    try:
        return NetworkSpec.from_json(Path(path).read_text())
    except (OSError, ValueError, KeyError, NetworkValidationError) as e:
        raise ValidationFailure(f"cannot load network spec {path}: {e}") from e


def _run_config(args, horizon: float) -> RunConfig:
    return RunConfig(horizon=horizon, warmup_frac=args.warmup,
                     n_batches=args.batches, seed=args.seed,
                     thin=getattr(args, "thin", 0))


def _out_dir(args, spec: NetworkSpec, sub: str) -> Path:
    return make_out_dir(Path(args.out), spec_hash(spec), sub)


def _manifest(args, spec: NetworkSpec, extra: dict) -> dict:
    m = {"code_version": __version__, "spec_hash": spec_hash(spec),
         "spec": spec.to_json_dict(), "seed": args.seed}
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    spec = _load_spec(args.spec)
    report: dict = {"J": spec.n_stations,
                    "lambda": [repr(x) for x in spec.lam]}
    from .static_analysis import hitting_matrix
    w = hitting_matrix(spec.routing)
    r0_raw, r0 = critical_scale(w)
    report["w"] = [[repr(float(x)) for x in row] for row in w]
    report["r0_raw"] = repr(r0_raw)
    report["r0"] = repr(r0)
    scales = args.r or []
    per_scale = []
    for r in scales:
        scaled = make_scaled(spec, r)
        prof = heavy_traffic_profile(scaled)
        margins = []
        for k in range(1, spec.n_stations + 1):
            dm = drift_margin(scaled, prof, k)
            margins.append({"k": k, "lhs": repr(dm.lhs),
                            "identity_rhs": repr(dm.identity_rhs),
                            "lower_bound": repr(dm.lower_bound)})
        per_scale.append({
            "r": repr(r),
            "mu": [repr(x) for x in scaled.mu],
            "rho": [repr(x) for x in scaled.rho],
            "u_vectors": [[repr(float(x)) for x in u] for u in prof.u_vectors],
            "drift_margins": margins,
        })
    report["scales"] = per_scale
    if not scales:
        # u vectors are scale-free; report them at any valid scale
        prof = heavy_traffic_profile(make_scaled(spec, 0.5))
        report["u_vectors"] = [[repr(float(x)) for x in u] for u in prof.u_vectors]
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        d = _out_dir(args, spec, "analyze")
        write_json(d / "report.json", report)
        write_json(d / "manifest.json", _manifest(args, spec, {"r": [repr(r) for r in scales]}))
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    scaled = make_scaled(spec, args.r)
    cfg = _run_config(args, args.horizon)
    integrands = {}
    for j in range(1, spec.n_stations + 1):
        integrands[f"z{j}"] = QueuePower(scaled, j, 1.0)
        integrands[f"z{j}_sq"] = QueuePower(scaled, j, 2.0)
    reports = {}
    results = []
    for rep in range(args.reps):
        c = RunConfig(horizon=cfg.horizon, warmup_frac=cfg.warmup_frac,
                      n_batches=cfg.n_batches, seed=cfg.seed, rep=rep,
                      thin=cfg.thin)
        results.append(run(scaled, c, time_integrands=integrands))
    res = results[0]
    from .bar import merge_time_reports
    for name in integrands:
        reports[name] = merge_time_reports(name, results, 0.95).to_json_dict()
    rates = []
    for kind in (KIND_ARRIVAL, KIND_COMPLETION):
        for st in range(spec.n_stations):
            if kind == KIND_ARRIVAL and spec.alpha[st] == 0:
                continue
            rr = res.rate_report(kind, st)
            target = (scaled.alpha[st] if kind == KIND_ARRIVAL
                      else scaled.lam[st])
            rates.append({"kind": "arrival" if kind == KIND_ARRIVAL else "completion",
                          "station": st + 1, "target": repr(target),
                          **rr.to_json_dict()})
    conservation = (res.ext_arrivals + res.routed_in - res.departures
                    - (res.z_end - res.z_start))
    report = {
        "r": repr(args.r), "horizon": repr(args.horizon),
        "n_events": res.n_events,
        "scaled_queue_moments": reports,
        "rates": rates,
        "conservation_residual": [int(x) for x in conservation],
        "spec_hash": spec_hash(spec),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        d = _out_dir(args, spec, "simulate")
        write_json(d / "report.json", report)
        write_json(d / "manifest.json", _manifest(args, spec, {
            "r": repr(args.r), "horizon": repr(args.horizon),
            "warmup": repr(args.warmup), "batches": args.batches,
            "reps": args.reps, "thin": args.thin}))
        if args.thin:
            _write_palm_csv(d / "palm.csv", res)
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK


def _write_palm_csv(path: Path, res) -> None:
    j = res.scaled.n_stations
    lines = ["kind,station,clock,variate,route," +
             ",".join(f"z{i + 1}" for i in range(j))]
    for (kind, st), cols in sorted(res.palm.records.items()):
        for i in range(cols["clock"].size):
            lines.append(",".join([
                "completion" if kind == KIND_COMPLETION else "arrival",
                str(st + 1), repr(float(cols["clock"][i])),
                repr(float(cols["variate"][i])), str(int(cols["route"][i])),
                *(repr(float(x)) for x in cols["z"][i])]))
    path.write_text("\n".join(lines) + "\n")


def _cmd_verify_bar(args) -> int:
    spec = _load_spec(args.spec)
    scaled = make_scaled(spec, args.r)
    try:
        funcs = {sel: parse_selector(sel, scaled) for sel in args.function}
    except ValueError as e:
        raise ValidationFailure(str(e)) from e
    for sel, f in funcs.items():
        if f.bound is None:
            raise ValidationFailure(
                f"{sel}: unbounded function rejected (pass kappa or omit it "
                "for the default cap)")
    cfg = _run_config(args, args.horizon)
    reports = verify_bar_suite(scaled, funcs, cfg, reps=args.reps)
    out = {sel: rep.to_json_dict() for sel, rep in reports.items()}
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.out:
        d = _out_dir(args, spec, "verify-bar")
        write_json(d / "report.json", out)
        write_json(d / "manifest.json", _manifest(args, spec, {
            "r": repr(args.r), "horizon": repr(args.horizon),
            "functions": list(args.function), "reps": args.reps}))
        lines = ["function,r,residual,half_width,interior_term,jump_total,passed"]
        for sel in sorted(reports):
            rep = reports[sel]
            lines.append(",".join([
                f'"{sel}"', repr(float(args.r)), repr(rep.residual),
                repr(rep.half_width), repr(rep.interior_term),
                repr(rep.jump_total), str(rep.passed)]))
        (d / "results.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK if all(rep.passed for rep in reports.values()) else EXIT_STATISTICAL


def _cmd_statements(args) -> int:
    spec = _load_spec(args.spec)
    scaled = make_scaled(spec, args.r)
    cfg = _run_config(args, args.horizon)
    try:
        est = estimate_statements(scaled, args.k, args.n, args.M, cfg,
                                  reps=args.reps)
    except ValueError as e:
        raise ValidationFailure(str(e)) from e
    report = est.to_json_dict()
    if args.residual_moments:
        rm = residual_moments(scaled, max(1.0, args.M or spec.moment_order), cfg)
        report["residual_moments"] = {k: v.to_json_dict() for k, v in rm.items()}
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        from .experiments import SWEEP_CSV_HEADER
        d = _out_dir(args, spec, "statements")
        write_json(d / "report.json", report)
        write_json(d / "manifest.json", _manifest(args, spec, {
            "r": repr(args.r), "k": args.k, "n": repr(args.n),
            "M": repr(args.M) if args.M is not None else None,
            "horizon": repr(args.horizon), "reps": args.reps}))
        # one sweep-schema row so runs aggregate across invocations
        row = ",".join([
            repr(float(args.r)), str(args.k), repr(float(args.n)),
            repr(est.s1.estimate), repr(est.s1.half_width),
            repr(est.s2.estimate), repr(est.s2.half_width),
            repr(est.s3.estimate), repr(est.s3.half_width),
            repr(est.s4.estimate), repr(est.s4.half_width),
            repr(float(args.horizon)), str(args.batches), str(args.seed), "0"])
        (d / "results.csv").write_text(SWEEP_CSV_HEADER + "\n" + row + "\n")
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.replay:
        out = Path(args.out) if args.out else None
        d = make_out_dir(out, json.loads(Path(args.replay).read_text())["spec_hash"],
                         "sweep") if out else None
        result = run_sweep_from_manifest(Path(args.replay), out_dir=d,
                                         jobs=args.jobs)
        print(result.csv_text(), end="")
        if d:
            print(f"wrote {d}", file=sys.stderr)
        return EXIT_OK
    spec = _load_spec(args.spec)
    grid = tuple(args.r_grid)
    statements = []
    for pair in args.statement:
        k_s, n_s = pair.split(",")
        statements.append((int(k_s), float(n_s)))
    horizons = (tuple(args.horizons) if args.horizons
                else tuple(default_horizon(r, args.h0) for r in grid))
    try:
        plan = SweepPlan(spec=spec, r_grid=grid, statements=tuple(statements),
                         horizons=horizons,
                         moment_bound=float(args.M if args.M is not None
                                            else spec.moment_order),
                         seed=args.seed, warmup_frac=args.warmup,
                         n_batches=args.batches, reps=args.reps)
    except ValueError as e:
        raise ValidationFailure(str(e)) from e
    d = _out_dir(args, spec, "sweep") if args.out else None
    result = run_sweep(plan, out_dir=d, jobs=args.jobs)
    print(result.csv_text(), end="")
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    if d:
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK


def _cmd_product_form(args) -> int:
    spec = _load_spec(args.spec)
    cfg = _run_config(args, args.horizon)
    report = product_form_check(spec, args.r, cfg)
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    if args.out:
        d = _out_dir(args, spec, "product-form")
        write_json(d / "report.json", report.to_json_dict())
        write_json(d / "manifest.json", _manifest(args, spec, {
            "r": repr(args.r), "horizon": repr(args.horizon)}))
        print(f"wrote {d}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_STATISTICAL


def _cmd_routing_oracle(args) -> int:
    spec = _load_spec(args.spec)
    rows = routing_oracle(spec.routing, args.paths, args.seed)
    table = [{"j": row.j, "k": row.k, "analytic": repr(row.analytic),
              "estimate": repr(row.estimate), "stderr": repr(row.stderr),
              "z": repr(row.z_score)} for row in rows]
    print(json.dumps(table, indent=2, sort_keys=True))
    if args.out:
        d = _out_dir(args, spec, "routing-oracle")
        write_json(d / "report.json", {"rows": table})
        write_json(d / "manifest.json", _manifest(args, spec, {
            "paths": args.paths}))
        print(f"wrote {d}", file=sys.stderr)
    worst = max((abs(row.z_score) for row in rows), default=0.0)
    return EXIT_OK if worst <= 4.0 else EXIT_STATISTICAL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, sim: bool = True,
                spec_required: bool = True) -> None:
    p.add_argument("--spec", required=spec_required,
                   help="network spec JSON file")
    p.add_argument("--out", default=None, help="output directory root")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    if sim:
        p.add_argument("--horizon", type=float, default=1e5,
                       help="model-time horizon per replication")
        p.add_argument("--warmup", type=float, default=0.2,
                       help="warmup fraction discarded")
        p.add_argument("--batches", type=int, default=32)
        p.add_argument("--reps", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gjnet",
        description="Open-network simulation and stationarity verification "
                    "in multi-scale heavy traffic")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="exact deterministic quantities")
    _add_common(p, sim=False)
    p.add_argument("--r", type=float, action="append",
                   help="scale for rate-dependent fields (repeatable)")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("simulate", help="simulate and report rates and moments")
    _add_common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--thin", type=int, default=0,
                   help="keep every n-th jump record (0 keeps none)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("verify-bar", help="stationarity residual for bounded "
                                          "state functions")
    _add_common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--function", action="append", required=True,
                   help="selector, e.g. 'fkn(k=1,n=2,kappa=50)' (repeatable)")
    p.add_argument("--thin", type=int, default=0)
    p.set_defaults(func=_cmd_verify_bar)

    p = sub.add_parser("statements", help="scaled queue moment statistics")
    _add_common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--M", type=float, default=None,
                   help="moment bound (defaults to the spec's M)")
    p.add_argument("--residual-moments", action="store_true")
    p.set_defaults(func=_cmd_statements)

    p = sub.add_parser("sweep", help="statement estimates over a scale grid")
    _add_common(p, spec_required=False)
    p.add_argument("--r-grid", type=float, nargs="+", default=None)
    p.add_argument("--statement", action="append", default=None,
                   help="k,n pair, e.g. --statement 1,2 (repeatable)")
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--h0", type=float, default=1e6,
                   help="base horizon for the default schedule h0*(0.3/r)")
    p.add_argument("--horizons", type=float, nargs="+", default=None,
                   help="per-point horizons (overrides the schedule)")
    p.add_argument("--replay", default=None,
                   help="re-execute a sweep from its manifest.json")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("product-form", help="memoryless product-form oracle")
    _add_common(p)
    p.add_argument("--r", type=float, required=True)
    p.set_defaults(func=_cmd_product_form)

    p = sub.add_parser("routing-oracle", help="Monte Carlo routing paths vs "
                                              "exact hitting probabilities")
    _add_common(p, sim=False)
    p.add_argument("--paths", type=int, default=100_000)
    p.set_defaults(func=_cmd_routing_oracle)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "sweep" and not args.replay:
        if not args.spec or not args.r_grid or not args.statement:
            print("sweep needs --spec, --r-grid and --statement "
                  "(or --replay)", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NetworkValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
