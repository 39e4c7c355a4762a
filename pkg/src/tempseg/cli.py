"""Command-line entry point: gen-data, train, eval, ablate, report.

Exit codes: 0 success, 1 usage or validation error, 2 numerical divergence,
3 I/O error.  Every command writes a run manifest into its output directory;
reruns with identical inputs and seeds reproduce identical metric files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time
from pathlib import Path

from . import data as data_mod
from . import engine, metrics
from .config import Config, dump_config, load_config
from .errors import DivergenceError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise ValidationError(message)


def _dataset_hash(root: Path) -> str:
    h = hashlib.sha256()
    if root.is_dir():
        for path in sorted(root.rglob("*")):
            if path.is_file():
                h.update(str(path.relative_to(root)).encode())
                h.update(path.read_bytes())
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_run_manifest(out_dir: Path, command: str, cfg: Config, data_dir: Path | None,
                        elapsed: float, extra: dict[str, str] | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command = {command}",
        f"artifact_version = {_version()}",
        f"wall_clock_seconds = {elapsed:.3f}",
    ]
    if data_dir is not None:
        lines.append(f"dataset_hash = {_dataset_hash(data_dir)}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    _atomic_write(out_dir / "run_manifest.txt", "\n".join(lines) + "\n" + dump_config(cfg))


def _version() -> str:
    from . import __version__

    return __version__


def _resolve_cfg(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.data.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _resolve_cfg(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    start = time.perf_counter()
    counts = data_mod.generate_dataset(
        out,
        num_train=cfg.data.num_train,
        num_val=cfg.data.num_val,
        seed=cfg.data.seed,
        height=cfg.data.height,
        width=cfg.data.width,
        num_classes=cfg.data.num_classes,
        clip_length=cfg.data.clip_length,
        noise_amplitude=cfg.data.noise_amplitude,
        channels=cfg.data.channels,
    )
    _write_run_manifest(out, "gen-data", cfg, out, time.perf_counter() - start)
    print(f"generated {counts['train']} train and {counts['val']} val clips in {out}")
    return EXIT_OK


def _parse_terms(spec: str):
    from .losses import TermFlags

    if spec == "none":
        return TermFlags()
    if spec == "all":
        return TermFlags.all()
    flags = TermFlags()
    for name in spec.split(","):
        name = name.strip().lower()
        if name not in ("sf", "pf", "mf", "tl"):
            raise ValidationError(f"unknown term {name!r}; use sf,pf,mf,tl|all|none")
        setattr(flags, name, True)
    return flags


def cmd_train(args) -> int:
    cfg = _resolve_cfg(args)
    if args.terms is not None:
        cfg.train.terms = _parse_terms(args.terms)
    out = Path(args.out)
    start = time.perf_counter()
    if args.role == "teacher":
        ckpt = engine.train_teacher(cfg, args.data, out, resume=args.resume)
    else:
        if args.teacher is None:
            raise ValidationError("student training requires --teacher <checkpoint dir>")
        teacher = engine.load_checkpoint(args.teacher)
        ckpt = engine.train_student(cfg, args.data, teacher, out, resume=args.resume)
    _write_run_manifest(
        out, f"train:{args.role}", cfg, Path(args.data), time.perf_counter() - start,
        extra={"iterations": str(ckpt.iteration)},
    )
    print(f"trained {args.role} for {ckpt.iteration} iterations -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = engine.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    start = time.perf_counter()
    report = engine.evaluate(ckpt, args.data, split=args.split)
    metrics.write_report_csvs(report, out)
    _atomic_write(out / "timing.txt", f"fps = {report.fps:.2f}\n")
    _write_run_manifest(
        out, "eval", ckpt.config, Path(args.data), time.perf_counter() - start
    )
    print(metrics.format_table(report))
    return EXIT_OK


def _scheme_flags_str(scheme: str) -> str:
    flags = engine.SCHEMES[scheme]
    return "".join(
        name.upper() if getattr(flags, name) else "-" for name in ("sf", "pf", "mf", "tl")
    )


def cmd_ablate(args) -> int:
    cfg = _resolve_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schemes = list(engine.SCHEMES) if args.full_grid else list(engine.DEFAULT_SCHEME_GRID)
    start = time.perf_counter()
    teacher = engine.train_teacher(cfg, args.data, out / "teacher")
    rows = [["scheme", "terms", "miou", "pixel_accuracy", "tc"]]
    failed = False
    import copy

    for scheme in schemes:
        run_cfg = copy.deepcopy(cfg)
        run_cfg.train.terms = engine.SCHEMES[scheme]
        try:
            ckpt = engine.train_student(run_cfg, args.data, teacher, out / f"scheme_{scheme}")
            report = engine.evaluate(ckpt, args.data)
            rows.append([
                scheme, _scheme_flags_str(scheme),
                f"{report.miou:.10f}", f"{report.pixel_accuracy:.10f}", f"{report.mean_tc:.10f}",
            ])
        except (DivergenceError, ValidationError, OSError) as exc:
            rows.append([scheme, _scheme_flags_str(scheme), "FAILED", "FAILED", "FAILED"])
            print(f"scheme {scheme} failed: {exc}", file=sys.stderr)
            failed = True
    table_path = out / "ablation.csv"
    tmp = table_path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as f:
        csv.writer(f).writerows(rows)
    os.replace(tmp, table_path)
    _write_run_manifest(out, "ablate", cfg, Path(args.data), time.perf_counter() - start)
    for row in rows:
        print(" ".join(f"{c:>16}" for c in row))
    return EXIT_USAGE if failed else EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    shown = False
    for name in ("metrics.csv", "per_class.csv", "ablation.csv"):
        path = out / name
        if not path.exists():
            continue
        shown = True
        print(f"== {name} ==")
        with open(path, newline="") as f:
            for row in csv.reader(f):
                print(" ".join(f"{c:>16}" for c in row))
        print()
    if not shown:
        raise ValidationError(f"no report files found in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override data and train seeds")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output dir")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the teacher or a student")
    common(p)
    p.add_argument("role", choices=["teacher", "student"])
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--teacher", help="teacher checkpoint dir (student role)")
    p.add_argument("--terms", help="student terms: comma list of sf,pf,mf,tl or all|none")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the scheme grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--full-grid", action="store_true", help="all ten schemes instead of a,b,c,d,e,j")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="print tables from a previous run's output dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
