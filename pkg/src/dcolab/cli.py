"""Command line: one subcommand per pipeline stage plus ``pipeline`` and ``report``.

Exit codes: 0 success, 1 usage or configuration error (including missing
upstream artifacts), 2 numerical failure, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import PROFILES, load_config
from .errors import IncompatibleModel, InvalidArgument, InvalidConfig, NumericalFailure
from .pipeline import STAGES, StageError, run_pipeline, run_stage
from .report import build_report

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("dcolab")

HELP = {
    "gen": "generate catalog, ground-truth CTR and impression logs",
    "label": "bucket training logs by day and flag ambiguous creatives",
    "features": "build the per-creative feature table",
    "train-teacher": "train the attention CTR teacher on all impressions",
    "soft-labels": "emit teacher soft labels for every creative",
    "search": "one-shot operator search on the strict set",
    "train-autoco": "retrain the searched architecture and the FM baseline",
    "train-rerank": "distill the teacher into the listwise reranker",
    "bandit-sim": "regret curves of the bandit policies on fixed arms",
    "replay": "replay stage-1 and two-stage policies on held-out logs",
    "report": "summarise a run directory (never retrains)",
    "pipeline": "run every stage, then report; exit 3 if a gating check fails",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=os.environ.get("DCO_CONFIG"),
                        help="INI config file (env DCO_CONFIG)")
    common.add_argument("--seed", type=int, help="global seed (env DCO_SEED)")
    common.add_argument("--out", metavar="DIR", help="run directory (env DCO_OUT)")
    common.add_argument("--workers", type=int, help="worker processes (env DCO_WORKERS)")
    common.add_argument("--profile", choices=sorted(PROFILES),
                        default=os.environ.get("DCO_PROFILE", "desk"), help="settings profile")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="dcolab", description="Two-stage creative selection experiments on synthetic logs.",
        epilog="Environment: DCO_<SECTION>__<KEY> overrides one config key.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in (*STAGES, "report", "pipeline"):
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def _print_checks(rep) -> None:
    for st, why in rep.missing.items():
        print(f"absent  {st}: {why}")
    for c in rep.checks:
        tag = "PASS" if c.passed else "FAIL"
        info = "" if c.gating else " (info)"
        print(f"{tag}{info}  {c.name} = {c.value} ({c.threshold})")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.profile,
                          overrides={"seed": args.seed, "out": args.out, "workers": args.workers})
        if cfg.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        if args.command == "report":
            # an explicit config supplies the thresholds; otherwise the run's own
            rep = build_report(cfg.out, cfg if args.config else None)
            _print_checks(rep)
            print(f"report written to {cfg.out}/report/summary.md")
            if not rep.complete:
                return EXIT_USAGE
            return EXIT_OK if rep.passed else EXIT_ACCEPTANCE
        if args.command == "pipeline":
            run_pipeline(cfg)
            rep = build_report(cfg.out, cfg)
            _print_checks(rep)
            print(f"report written to {cfg.out}/report/summary.md")
            return EXIT_OK if rep.passed else EXIT_ACCEPTANCE
        log.info("running %s into %s", args.command, cfg.out)
        run_stage(cfg, args.command)
        print(f"{args.command}: artifacts written to {cfg.out}/{args.command}")
        return EXIT_OK
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.trail:
            print("finished artifacts:\n  " + "\n  ".join(exc.trail), file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericalFailure) else EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidConfig, InvalidArgument, IncompatibleModel, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
