"""Command-line entry point.

    admitaudit run --config config.json [--out DIR] [--seed N] [--threads N]
    admitaudit generate|train|audit|report|sweep --config config.json ...

Each subcommand runs one stage on the previous stage's artifacts; ``run``
executes the whole pipeline and writes the manifest. Exit code 0 on
success; failures print a stage-named diagnostic and exit 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from typing import Optional, Sequence

from . import experiment
from .experiment import ExperimentConfig


def _add_common(parser: argparse.ArgumentParser, require_config: bool) -> None:
    parser.add_argument("--config", required=require_config, help="path to a JSON experiment config")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, help="worker processes for ensemble training")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument(
        "--policies", help="comma-separated policy names (overrides config)"
    )
    parser.add_argument("--cutoff", type=int, help="minimum top-pool decile, 1..10")
    parser.add_argument("--m", type=int, help="bootstrap models per policy")
    parser.add_argument(
        "--target",
        choices=("admitted", "admitted_or_waitlisted"),
        help="training label definition",
    )
    parser.add_argument(
        "--full-scale",
        action="store_true",
        help="production-scale cohort (44,293/15,540 applicants) and m=1000",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="admitaudit",
        description="Policy-ablation and bootstrap-arbitrariness audits of applicant ranking models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "run the full pipeline and write the manifest"),
        ("generate", "generate the synthetic cohort (applicants.csv)"),
        ("train", "train one model per policy (rankings.csv)"),
        ("audit", "build bootstrap ensembles (outcomes, consistency, arbitrariness)"),
        ("report", "recompute group-impact tables from raw CSVs (group_impact.csv)"),
        ("sweep", "recompute shares across cutoffs 10..1 (sweep.csv)"),
    ):
        _add_common(sub.add_parser(name, help=text), require_config=False)
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "out_dir": args.out,
        "threads": args.threads,
        "master_seed": args.seed,
        "cutoff": args.cutoff,
        "m": args.m,
        "target": args.target,
    }
    if args.policies:
        overrides["policies"] = [p.strip() for p in args.policies.split(",") if p.strip()]
    if args.config:
        config = experiment.load_config(args.config, **overrides)
    else:
        base = experiment.demo_config(out_dir=args.out or "artifacts").to_dict()
        config = experiment.config_from_dict(base, **overrides)
    if args.full_scale:
        raw = config.to_dict()
        raw["cohort"] = dict(raw["cohort"], n_train=44293, n_test=15540)
        raw["m"] = 1000
        raw["max_vocab"] = 512
        config = experiment.config_from_dict(raw)
    return config


_STAGES = {
    "generate": experiment.stage_generate,
    "train": experiment.stage_train,
    "audit": experiment.stage_audit,
    "report": experiment.stage_report,
    "sweep": experiment.stage_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error in stage 'config': {err}", file=sys.stderr)
        return 1
    stages = list(experiment.STAGES) if args.command == "run" else [args.command]
    start = time.monotonic()
    for stage in stages:
        try:
            os.makedirs(config.out_dir, exist_ok=True)
            _STAGES[stage](config)
        except Exception as err:  # noqa: BLE001 - CLI boundary
            print(f"error in stage '{stage}': {err}", file=sys.stderr)
            return 1
    if args.command == "run":
        manifest = experiment.write_manifest(config, wall_time_s=time.monotonic() - start)
        print(json.dumps({"out_dir": config.out_dir, "content_hash": manifest["content_hash"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
