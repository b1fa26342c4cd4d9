#!/usr/bin/env python3
"""Uniform-boundedness sweep: scaled queue second moments over a scale grid.

For the bursty-service tandem and feedback-to-front networks, estimates
S1(k, n=2) = time-average of (r^k Z_k)^2 on a descending scale grid and
checks the flatness heuristic (max/min ratio at most 5, no significant
increasing trend as r decreases).  Horizons stretch like 1/r**(2k) at the
deepest station because that statistic's mixing time does; the CLI default
schedule (h0 * 0.3/r) is far too short at the smallest scales.

Usage: python scripts/run_bound_sweep.py [--out out/bound-sweep] [--jobs 2]
"""

import argparse
import sys
from pathlib import Path

from gjnet import corpus
from gjnet.experiments import SweepPlan, run_sweep

GRID = (0.3, 0.2, 0.1, 0.05)
HORIZONS = (1.0e6, 1.5e6, 4.0e6, 4.8e7)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=707)
    ap.add_argument("--scale-horizons", type=float, default=1.0,
                    help="multiply all horizons (use <1 for a quick look)")
    args = ap.parse_args()

    ok = True
    for name, spec in (("tandem", corpus.tandem_hyper()),
                       ("feedback_front", corpus.feedback_front_hyper())):
        plan = SweepPlan(
            spec=spec, r_grid=GRID,
            statements=((1, 2.0), (2, 2.0)),
            horizons=tuple(h * args.scale_horizons for h in HORIZONS),
            moment_bound=2.0, seed=args.seed)
        out_dir = Path(args.out) / name if args.out else None
        result = run_sweep(plan, out_dir=out_dir, jobs=args.jobs)
        print(result.csv_text(), end="")
        for stmt in result.summary["per_statement"]:
            ratio = float(stmt["max_min_ratio"])
            p = float(stmt["mk_increasing_p"])
            flat = ratio <= 5.0 and p > 0.01
            ok &= flat
            print(f"# {name} k={stmt['k']}: max/min={ratio:.2f} "
                  f"trend_p={p:.3f} -> {'ok' if flat else 'FLAT CHECK FAILED'}",
                  file=sys.stderr)
    return 0 if ok else 3


if __name__ == "__main__":
    sys.exit(main())
