#!/usr/bin/env python3
"""End-to-end run: generate data, train teacher and student, evaluate both.

Usage: python3 scripts/run_pipeline.py [--config configs/small.cfg]
                                       [--out runs/pipeline] [--seed 0]
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
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    common = ["--config", args.config, "--seed", str(args.seed)]
    data = out / "dataset"
    if not data.exists():
        sh(["gen-data", *common, "--out", str(data)])
    sh(["train", "teacher", *common, "--data", str(data), "--out", str(out / "teacher")])
    sh([
        "train", "student", *common, "--data", str(data),
        "--teacher", str(out / "teacher"), "--terms", "all",
        "--out", str(out / "student"),
    ])
    sh(["eval", "--checkpoint", str(out / "teacher"), "--data", str(data),
        "--out", str(out / "eval_teacher")])
    sh(["eval", "--checkpoint", str(out / "student"), "--data", str(data),
        "--out", str(out / "eval_student")])
    sh(["report", "--out", str(out / "eval_student")])


if __name__ == "__main__":
    main()
