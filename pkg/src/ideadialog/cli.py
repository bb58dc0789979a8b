"""Command-line entry point: ``ideadialog <stage> --run-dir DIR [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ideadialog.core import RunManifest
from ideadialog.gateway import GatewayError
from ideadialog.papers import BankError
from ideadialog.runner import (
    RunDirectory,
    StageError,
    dedup_stage,
    ensure_banks,
    expand_stage,
    load_manifest,
    make_gateway,
    rank_stage,
    report_stage,
    run_grid,
)

logger = logging.getLogger("ideadialog")

STAGES = ("bank", "generate", "dedup", "expand", "rank", "report", "all")


def _split(value: str | None) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", required=True, type=Path, help="run directory (created on first use)")
    common.add_argument("--manifest", type=Path, help="JSON manifest; keys override the defaults")
    common.add_argument("--mock", action="store_true", help="use the offline deterministic provider")
    common.add_argument("--topics", help="comma-separated topic ids to keep")
    common.add_argument("--configs", help="comma-separated config ids to keep (e.g. baseline,parallel-N3)")
    common.add_argument("--seeds", type=int, help="number of seeded trials per topic x config")
    common.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                        help="skip work already recorded in the run directory (default: on)")
    common.add_argument("--concurrency", type=int, default=8, help="concurrent provider requests")
    common.add_argument("--mock-delay", type=float, default=0.0, help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ideadialog", description="Multi-agent ideation grid runner and evaluator.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "bank": "build per-topic paper banks",
        "generate": "run every topic x config x seed trial",
        "dedup": "embed ideas and drop near-duplicates per pool",
        "expand": "expand surviving ideas into proposals",
        "rank": "judge tournaments of each config against Baseline",
        "report": "write the comparison tables",
        "all": "every stage in order",
    }
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_manifest(args: argparse.Namespace) -> RunManifest | None:
    """Manifest requested on the command line, or None to use the run directory's own."""
    stored_path = args.run_dir / "manifest.json"
    overridden = any([args.manifest, args.mock, args.topics, args.configs, args.seeds])
    if not overridden and (stored_path.exists() or args.command not in ("bank", "generate", "all")):
        # later stages never create a run directory from defaults
        return None
    if args.manifest:
        m = load_manifest(args.manifest)
    elif stored_path.exists():
        m = RunDirectory.open(args.run_dir).manifest
    else:
        m = RunManifest()
    if args.mock:
        m = replace(m, provider=replace(m.provider, mock=True))
    if args.topics:
        keep = _split(args.topics)
        unknown = set(keep) - {t.id for t in m.topics}
        if unknown:
            raise StageError(f"unknown topics: {sorted(unknown)}")
        m = replace(m, topics=tuple(t for t in m.topics if t.id in keep))
    if args.configs:
        keep = _split(args.configs)
        unknown = set(keep) - {c.config_id for c in m.configs}
        if unknown:
            raise StageError(f"unknown configs: {sorted(unknown)}")
        m = replace(m, configs=tuple(c for c in m.configs if c.config_id in keep))
    if args.seeds:
        m = replace(m, seeds_per_cell=args.seeds)
    return m


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = RunDirectory.open(args.run_dir, resolve_manifest(args))
        gateway = make_gateway(run.manifest, args.concurrency, args.mock_delay)
        cmd = args.command
        if cmd == "bank":
            banks = ensure_banks(run)
            for topic, bank in banks.items():
                print(f"{topic}: {len(bank)} papers ({bank.source})")
        if cmd in ("generate", "all"):
            outcome = run_grid(run, gateway, args.concurrency, args.resume)
            print(f"generate: {outcome.completed} cells complete ({outcome.executed} run now), "
                  f"{outcome.ideas} ideas, {len(outcome.failed)} failed")
            if outcome.failed and cmd == "all":
                print("stopping before dedup: some cells failed", file=sys.stderr)
                return 1
        if cmd in ("dedup", "all"):
            reports = dedup_stage(run, gateway, args.resume)
            print(f"dedup: {len(reports)} pools")
        if cmd in ("expand", "all"):
            calls = expand_stage(run, gateway, args.concurrency, args.resume)
            print(f"expand: {calls} new expansions")
        if cmd in ("rank", "all"):
            results = rank_stage(run, gateway, args.concurrency, args.resume)
            print(f"rank: {len(results)} tournaments")
        if cmd in ("report", "all"):
            report = report_stage(run)
            print(report.text())
    except (StageError, BankError, GatewayError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if run.failures:
        for f in run.failures.values():
            print(f"failed: {f['key']} ({f['stage']}, {f['attempts']} attempts): {f['error']}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
