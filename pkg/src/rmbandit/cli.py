"""Command-line entry point: ``rmbandit {run,summarize,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config, validate_config
from .errors import InvalidConfig
from .experiment import (
    OUT_DIR_ENV,
    expand_glob,
    run_experiment,
    summarize_files,
    write_summary,
)


def parse_seeds(text: str) -> list[int]:
    """``"0-4"``, ``"1,3,7"`` or a mix such as ``"0-2,9"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmbandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every algorithm and seed in a config")
    run.add_argument("config")
    run.add_argument("--seeds", type=parse_seeds, help="override the config seeds, e.g. 0-14")
    run.add_argument("--out-dir", help=f"output directory (default: config, ${OUT_DIR_ENV}, ./runs)")
    run.add_argument("--workers", type=_positive_int, default=None,
                     help="parallel runs (default: available cores)")
    run.add_argument("--thin", type=_positive_int, default=None,
                     help="record every n-th step in trace files")

    summ = sub.add_parser("summarize", help="summary statistics from trace files")
    summ.add_argument("pattern", help="glob of trace files")
    summ.add_argument("--out-dir", default=None, help="where to write summary.csv/json (default: .)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    outcome = run_experiment(config, seeds=args.seeds, out_dir=args.out_dir,
                             workers=args.workers, thin=args.thin)
    for f in outcome.failures:
        print(f"FAILED {f['algorithm']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    for s in outcome.stats:
        print(f"{s.algorithm}: final {s.final_mean:.6g} +/- {s.final_half_width:.3g} "
              f"({s.n_seeds} seeds)")
    print(f"wrote {len(outcome.trace_files)} trace files to {outcome.out_dir}")
    return outcome.exit_code


def _cmd_summarize(args) -> int:
    paths = expand_glob(args.pattern)
    if not paths:
        print(f"no files match {args.pattern!r}", file=sys.stderr)
        return 2
    stats = summarize_files(paths)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out, stats, {"files": paths})
    for s in stats:
        print(f"{s.algorithm}: final {s.final_mean:.6g} +/- {s.final_half_width:.3g} "
              f"({s.n_seeds} traces)")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    problems = validate_config(config)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return 1 if problems else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "summarize": _cmd_summarize, "validate": _cmd_validate}
    try:
        return handlers[args.command](args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
