#!/usr/bin/env python3
"""Stationarity-residual sweep over the verification corpus.

Runs every truncated family member against each corpus network at two
scales with several seeds, and prints one row per cell plus a pass-rate
summary.  A nonzero exit signals that fewer than 95% of cells passed.

Usage: python scripts/run_bar_corpus.py [--horizon 6e4] [--seeds 5]
"""

import argparse
import sys

from gjnet import corpus
from gjnet.bar import verify_bar_suite
from gjnet.engine import RunConfig
from gjnet.network import make_scaled
from gjnet.test_functions import parse_selector

SELECTORS = ("psi(n=2)", "hk(k=1)", "fkn(k=1,n=1)", "fknD(k=1,n=1)",
             "fknE(k=1,n=1)", "fknF(k=1,n=1)", "f0F()")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=6e4)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scales", type=float, nargs="+", default=[0.3, 0.1])
    args = ap.parse_args()

    cells = passed = 0
    print("network,r,seed,function,residual,half_width,passed")
    for name, spec in corpus.corpus().items():
        for r in args.scales:
            scaled = make_scaled(spec, r)
            funcs = {sel: parse_selector(sel, scaled) for sel in SELECTORS}
            for seed in range(args.seeds):
                cfg = RunConfig(horizon=args.horizon, seed=300 + seed)
                for sel, rep in verify_bar_suite(scaled, funcs, cfg).items():
                    cells += 1
                    passed += rep.passed
                    print(f"{name},{r},{seed},\"{sel}\","
                          f"{rep.residual!r},{rep.half_width!r},{rep.passed}")
    frac = passed / cells
    print(f"# {passed}/{cells} cells passed ({100 * frac:.1f}%)",
          file=sys.stderr)
    return 0 if frac >= 0.95 else 3


if __name__ == "__main__":
    sys.exit(main())
