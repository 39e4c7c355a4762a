#!/usr/bin/env python3
"""Train and evaluate the loss-term ablation grid and print the table.

Usage: python3 scripts/run_ablation.py [--config configs/small.cfg]
                                       [--out runs/ablation] [--seed 0]
                                       [--full-grid]
"""

import argparse
import sys
from pathlib import Path

from tempseg import cli


def sh(args):
    print("+ tempseg " + " ".join(args), flush=True)
    rc = cli.main(args)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/small.cfg")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-grid", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    common = ["--config", args.config, "--seed", str(args.seed)]
    data = out / "dataset"
    if not data.exists():
        sh(["gen-data", *common, "--out", str(data)])
    ablate = ["ablate", *common, "--data", str(data), "--out", str(out)]
    if args.full_grid:
        ablate.append("--full-grid")
    sh(ablate)


if __name__ == "__main__":
    main()
