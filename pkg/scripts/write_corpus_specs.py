#!/usr/bin/env python3
"""Dump the canonical verification networks as spec JSON files.

Usage: python scripts/write_corpus_specs.py [outdir]
"""

import sys
from pathlib import Path

from gjnet import corpus


def main() -> None:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("specs")
    outdir.mkdir(parents=True, exist_ok=True)
    specs = dict(corpus.corpus())
    specs["tandem_hyper"] = corpus.tandem_hyper()
    specs["feedback_front_hyper"] = corpus.feedback_front_hyper()
    for name, spec in specs.items():
        path = outdir / f"{name}.json"
        path.write_text(spec.to_json() + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
