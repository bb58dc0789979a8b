"""Non-duplicate ratio of each pool in a finished run as the similarity threshold varies.

Reads the embedded ideas written by the dedup stage, so it needs no provider.

    python3 scripts/threshold_sweep.py --run-dir runs/mock --thresholds 0.7,0.75,0.8,0.85,0.9
"""

import argparse
from collections import defaultdict
from statistics import fmean

from ideadialog import storage
from ideadialog.core import IdeaRecord
from ideadialog.dedup import dedup
from ideadialog.runner import RunDirectory


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--run-dir", required=True)
    ap.add_argument("--thresholds", default="0.7,0.75,0.8,0.85,0.9")
    args = ap.parse_args()
    thresholds = [float(t) for t in args.thresholds.split(",")]

    run = RunDirectory.open(args.run_dir)
    ratios: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for topic, cfg in run.pools():
        path = run.dedup_ideas_path(topic.id, cfg.config_id)
        if not path.exists():
            continue
        ideas = [IdeaRecord.from_dict(d) for d in storage.read_jsonl(path)]
        for t in thresholds:
            ratios[cfg.config_id][t].append(dedup(ideas, t)[1].non_duplicate_ratio)
    if not ratios:
        raise SystemExit("no dedup output yet; run `ideadialog dedup` first")

    print("config".ljust(20) + "".join(f"{t:>8.2f}" for t in thresholds))
    for cid, by_t in ratios.items():
        print(cid.ljust(20) + "".join(f"{fmean(by_t[t]):>8.2f}" for t in thresholds))


if __name__ == "__main__":
    main()
