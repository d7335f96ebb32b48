"""``cvq`` command line: stream, train, bench and compare."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    check_thresholds,
    compare_summaries,
    load_thresholds,
    run_bench,
    run_stream_experiment,
    run_train_experiment,
)
from .report import fmt, read_summary

RUNNERS = {"stream": run_stream_experiment, "train": run_train_experiment, "bench": run_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvq", description="Codebook quantizer experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in RUNNERS:
        p = sub.add_parser(mode, help=f"run a {mode} experiment")
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--policy", action="append", dest="policies", metavar="NAME",
                       help="policy to run; repeat for several")
        p.add_argument("--thresholds", type=Path)
    p = sub.add_parser("compare", help="compare summary.txt files")
    p.add_argument("summaries", nargs="+", type=Path)
    p.add_argument("--thresholds", type=Path)
    return parser


def _print_table(rows: list[dict], columns) -> None:
    print("\t".join(columns))
    for r in rows:
        print("\t".join(fmt(r.get(c, "")) for c in columns))


def _report(result) -> int:
    for s in result.summaries:
        print(f"{s.policy}\tmse={fmt(s.mse)}\tusage={fmt(s.usage)}\tperplexity={fmt(s.perplexity)}")
    if result.verdicts:
        _print_table(result.verdicts, ("pair", "metric", "verdict", "relative_gap"))
    if result.checks:
        _print_table(result.checks, ("policy", "metric", "op", "threshold", "observed", "result"))
    return 0 if result.passed else 1


def _run(args) -> int:
    overrides = {"seed": args.seed, "policies": args.policies,
                 "thresholds": str(args.thresholds) if args.thresholds else None}
    if args.out is not None:
        overrides["out"] = str(args.out)
    if args.config is not None:
        cfg = load_config(args.config, **overrides)
        if cfg.mode != args.command:
            cfg = cfg.replace(mode=args.command)
    else:
        cfg = ExperimentConfig(mode=args.command, **{k: v for k, v in overrides.items() if v is not None})
    result = RUNNERS[args.command](cfg, Path(cfg.out))
    print(f"wrote {cfg.out}")
    return _report(result)


def _compare(args) -> int:
    runs = [s for path in args.summaries for s in read_summary(path)]
    _print_table(compare_summaries(runs), ("metric", "winner", "best", "worst", "relative_gap", "verdict"))
    if args.thresholds is None:
        return 0
    checks = check_thresholds(runs, load_thresholds(args.thresholds))
    _print_table(checks, ("policy", "metric", "op", "threshold", "observed", "result"))
    return 0 if all(c["result"] == "pass" for c in checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            return _compare(args)
        return _run(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"cvq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
