"""Command line entry point: ``szegolab run | validate | replay``."""

from __future__ import annotations

import argparse
import glob
import os
import sys
from typing import List, Optional

from . import __version__
from .errors import NumericError, TruncationError, ValidationError
from .experiments import (
    ExperimentConfig,
    emit,
    read_report_config,
    read_report_rows,
    replay_row,
    rows_match,
    run,
)

EXIT_OK, EXIT_FAILED_CHECK, EXIT_ERROR = 0, 1, 2


def _config_paths(target: str) -> List[str]:
    if os.path.isdir(target):
        paths = sorted(glob.glob(os.path.join(target, "*.json")))
        if not paths:
            raise ValidationError("directory contains no *.json configs", target)
        return paths
    return [target]


def _format_for(path: str, override: Optional[str]) -> str:
    if override:
        return override
    return "json" if path.endswith(".json") else "csv"


def _cmd_run(args) -> int:
    status = EXIT_OK
    for path in _config_paths(args.config):
        try:
            cfg = ExperimentConfig.load(path).with_overrides(seed=args.seed)
            out = cfg.output_path
            if not os.path.isabs(out):
                out = os.path.join(args.output_dir or os.path.dirname(os.path.abspath(path)), out)
            report = run(cfg, threads=args.threads, timings=args.timings)
            emit(report, out, _format_for(out, args.format))
        except (NumericError, TruncationError) as exc:
            print(f"{path}: numeric error: {exc}", file=sys.stderr)
            status = EXIT_ERROR
            continue
        failed = [r for r in report.rows if not r.holds]
        print(f"{path}: {len(report.rows)} rows, {len(failed)} failed -> {out}")
        for r in failed:
            print(f"  FAIL n={r.n} {r.quantity}", file=sys.stderr)
        if failed and status == EXIT_OK:
            status = EXIT_FAILED_CHECK
    return status


def _cmd_validate(args) -> int:
    for path in _config_paths(args.config):
        cfg = ExperimentConfig.load(path)
        print(f"{path}: ok ({cfg.experiment}, hash {cfg.config_hash()[:12]})")
    return EXIT_OK


def _cmd_replay(args) -> int:
    rows = read_report_rows(args.report)
    if not 0 <= args.row < len(rows):
        raise ValidationError(f"row index out of range (report has {len(rows)} rows)", "--row")
    cfg = ExperimentConfig.load(args.config) if args.config else read_report_config(args.report)
    if cfg is None:
        raise ValidationError("CSV reports need --config for replay", "--config")
    stored = rows[args.row]
    if stored.get("seed") is not None:
        cfg = cfg.with_overrides(seed=stored["seed"])
    fresh = replay_row(cfg, stored, threads=args.threads)
    same = rows_match(stored, fresh)
    rec = fresh.record()
    print(",".join(f"{k}={rec[k]}" for k in rec))
    print("match" if same else "MISMATCH")
    return EXIT_OK if same else EXIT_FAILED_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="szegolab", description=__doc__)
    p.add_argument("--version", action="version", version=f"szegolab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a config file or every *.json in a directory")
    r.add_argument("config")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int, help="override mc.seed")
    r.add_argument("--output-dir", help="base for relative output paths (default: the config's directory)")
    r.add_argument("--timings", action="store_true", help="fill runtime_ms (reports stop being byte-identical)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check configs without running them")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    rp = sub.add_parser("replay", help="recompute one report row")
    rp.add_argument("report")
    rp.add_argument("--row", type=int, required=True)
    rp.add_argument("--config", help="config file (required for CSV reports)")
    rp.add_argument("--threads", type=int, default=1)
    rp.set_defaults(func=_cmd_replay)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (NumericError, TruncationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
