"""How position bias in the judge shows up in tournament outcomes.

Three mock judges: one that always picks the first-presented proposal, one
that always prefers the candidate side, and one that prefers the candidate
but falls back to "first presented" on 40% of prompts. For each, the
candidate win rate and the share of split decisions are reported with and
without order swapping.

    python3 scripts/position_bias_probe.py --pool 40 --trials 20
"""

import argparse
import hashlib
import statistics

from ideadialog.core import Topic
from ideadialog.gateway import Gateway
from ideadialog.mock import MockProvider
from ideadialog.tournament import TournamentSpec, run_tournament


def _is_candidate(text: str) -> bool:
    return text.rsplit(" ", 1)[-1].startswith("c")


def _mixed(a: str, b: str) -> str:
    lazy = hashlib.sha256(f"{a}|{b}".encode()).digest()[0] < 0.4 * 256
    if lazy:
        return "A"
    return "A" if _is_candidate(a) else "B"


JUDGES = {
    "first-presented": lambda a, b: "A",
    "prefers-candidate": lambda a, b: "A" if _is_candidate(a) else "B",
    "mixed (40% lazy)": _mixed,
}


def probe(judge, pool: int, rounds: int, trials: int, order_swap: bool) -> tuple[list[float], list[float]]:
    base = tuple(f"b{i:03d}" for i in range(pool))
    cand = tuple(f"c{i:03d}" for i in range(pool))
    texts = {p: f"proposal {p}" for p in base + cand}
    wins, splits = [], []
    for seed in range(trials):
        spec = TournamentSpec(Topic("probe", "position bias"), base, cand, rounds=rounds, order_swap=order_swap, seed=seed)
        result = run_tournament(spec, texts, Gateway(MockProvider(judge=judge)))
        wins.append(result.win_rate_candidate)
        splits.append(sum(m.split_decision for m in result.matches) / len(result.matches))
    return wins, splits


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--pool", type=int, default=40)
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--trials", type=int, default=20)
    args = ap.parse_args()

    print(f"{'judge':<20} {'order_swap':<11} {'win rate':>9} {'sd':>6} {'splits':>7}")
    for name, judge in JUDGES.items():
        for swap in (False, True):
            wins, splits = probe(judge, args.pool, args.rounds, args.trials, swap)
            print(f"{name:<20} {str(swap):<11} {statistics.fmean(wins):>9.3f} {statistics.pstdev(wins):>6.3f} "
                  f"{statistics.fmean(splits):>7.2f}")


if __name__ == "__main__":
    main()
