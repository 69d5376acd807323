"""Command-line entry point: ``timsim run|compare|analyze|selftest``."""

import argparse
import logging
import sys
from typing import List, Optional

from src.config import config
from src.expcli.commands import EXIT_CONFIG, cmd_analyze, cmd_compare, cmd_run
from src.expcli.selftest import cmd_selftest

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timsim",
        description="Training-inference mismatch simulator for a toy RL policy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment from a config file")
    run.add_argument("--config", required=True, help="Experiment YAML")
    run.add_argument("--out", default=None, help="Output directory (default: TIMSIM_OUT_DIR)")
    run.add_argument("--seed", type=int, default=None, help="Override the config seed")
    run.add_argument("--threads", type=int, default=None, help="Rollout worker threads")
    run.add_argument("--trace", action="store_true", help="Also write trace.jsonl")
    run.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted config override, e.g. loss.tau_seq=0.01 (repeatable)",
    )

    compare = sub.add_parser("compare", help="Run a comparison matrix")
    compare.add_argument("--config", required=True, help="Matrix YAML")
    compare.add_argument("--out", default=None, help="Output directory (default: TIMSIM_OUT_DIR)")
    compare.add_argument("--threads", type=int, default=None, help="Parallel cell processes")

    analyze = sub.add_parser("analyze", help="Offline mismatch analysis of a trace")
    analyze.add_argument("trace", help="trace.jsonl written by run --trace")
    analyze.add_argument("--out", default=None, help="analysis.json path (default: next to the trace)")

    sub.add_parser("selftest", help="Check kernel and loss contracts")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        config.validate()
    except ValueError as exc:
        logger.error(f"[ERROR] {exc}")
        return EXIT_CONFIG

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0

    if args.command == "run":
        return cmd_run(
            args.config,
            out_dir=args.out,
            overrides=args.override,
            seed=args.seed,
            threads=args.threads,
            trace=args.trace,
        )
    if args.command == "compare":
        return cmd_compare(args.config, out_dir=args.out, threads=args.threads)
    if args.command == "analyze":
        return cmd_analyze(args.trace, out_path=args.out)
    return cmd_selftest()


if __name__ == "__main__":
    sys.exit(main())
