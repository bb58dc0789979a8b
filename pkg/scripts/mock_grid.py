"""Run the whole pipeline on the offline mock provider and print the three tables.

    python3 scripts/mock_grid.py --run-dir runs/mock --topics bias,math --seeds 5
"""

import argparse
import logging
import time
from dataclasses import replace

from ideadialog.core import ProviderSettings, RunManifest
from ideadialog.runner import RunDirectory, dedup_stage, expand_stage, make_gateway, rank_stage, report_stage, run_grid


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--run-dir", required=True)
    ap.add_argument("--topics", help="comma-separated topic ids (default: all seven)")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--mock-seed", type=int, default=0)
    ap.add_argument("--concurrency", type=int, default=16)
    ap.add_argument("--independent", action="store_true", help="do not feed earlier idea names to later seeds")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    m = RunManifest(provider=ProviderSettings(mock=True, mock_seed=args.mock_seed), seeds_per_cell=args.seeds,
                    cumulative_existing_ideas=not args.independent)
    if args.topics:
        keep = args.topics.split(",")
        m = replace(m, topics=tuple(t for t in m.topics if t.id in keep))

    run = RunDirectory.open(args.run_dir, m)
    gw = make_gateway(m, args.concurrency)
    t0 = time.monotonic()
    outcome = run_grid(run, gw, args.concurrency)
    print(f"generate: {outcome.ideas} ideas from {outcome.completed} transcripts ({time.monotonic() - t0:.1f}s)")
    dedup_stage(run, gw)
    print(f"expand: {expand_stage(run, gw, args.concurrency)} calls")
    rank_stage(run, gw, args.concurrency)
    print(f"total provider calls: {gw.calls} ({time.monotonic() - t0:.1f}s)\n")
    print(report_stage(run).text())


if __name__ == "__main__":
    main()
