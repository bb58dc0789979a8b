"""Swiss-style pairwise judge tournament between Baseline and one candidate configuration.

Each round pairs every Baseline proposal with a Candidate proposal (random in
round 1, rank-aligned afterwards), the judge picks a winner, and the winner's
score goes up by one. Proposals are finally ranked by accumulated score.
"""

from __future__ import annotations

import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ideadialog.core import Decoding, MatchRecord, RankedProposal, Source, Topic, ValidationError, Verdict
from ideadialog.gateway import ChatRequest, Gateway
from ideadialog.prompts import PromptKind, render

logger = logging.getLogger(__name__)

PRECISION_NS = (10, 20, 40)
JUDGE_SYSTEM_PROMPT = "You are an impartial expert reviewer of AI research proposals."
_REASK = "\n\nYour last line must contain only the letter A or the letter B."


class JudgeUnparseable(Exception):
    pass


class NTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class TournamentSpec:
    topic: Topic
    baseline_pool: tuple[str, ...]
    candidate_pool: tuple[str, ...]
    rounds: int = 10
    judge_model: str = "gpt-4"
    order_swap: bool = True
    seed: int = 0
    decoding: Decoding = Decoding(temperature=0.0, max_tokens=512)

    def __post_init__(self) -> None:
        if set(self.baseline_pool) & set(self.candidate_pool):
            raise ValidationError("baseline and candidate pools overlap")
        if not self.baseline_pool or not self.candidate_pool:
            raise ValidationError("both pools must be nonempty")
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")


@dataclass(frozen=True)
class TournamentResult:
    matches: tuple[MatchRecord, ...]
    ranking: tuple[RankedProposal, ...]
    precision_at: dict[int, float]
    win_rate_candidate: float
    mean_score_by_source: dict[str, float]
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.meta,
            "precision_at": {str(n): v for n, v in self.precision_at.items()},
            "win_rate_candidate": self.win_rate_candidate,
            "mean_score_by_source": self.mean_score_by_source,
            "ranking": [r.to_dict() for r in self.ranking],
            "matches": [m.to_dict() for m in self.matches],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TournamentResult:
        known = {"precision_at", "win_rate_candidate", "mean_score_by_source", "ranking", "matches"}
        return cls(
            matches=tuple(MatchRecord.from_dict(m) for m in d["matches"]),
            ranking=tuple(RankedProposal.from_dict(r) for r in d["ranking"]),
            precision_at={int(n): float(v) for n, v in d["precision_at"].items()},
            win_rate_candidate=float(d["win_rate_candidate"]),
            mean_score_by_source={k: float(v) for k, v in d["mean_score_by_source"].items()},
            meta={k: v for k, v in d.items() if k not in known},
        )


@dataclass
class Standings:
    scores: dict[str, int]
    sources: dict[str, Source]

    @classmethod
    def start(cls, baseline: Sequence[str], candidate: Sequence[str]) -> Standings:
        sources = {p: Source.BASELINE for p in baseline} | {p: Source.CANDIDATE for p in candidate}
        return cls({p: 0 for p in sources}, sources)

    def ordered(self, source: Source) -> list[str]:
        """Proposals of one source, best first; ties broken by id."""
        ids = [p for p, s in self.sources.items() if s is source]
        return sorted(ids, key=lambda p: (-self.scores[p], p))


def pair_round(standings: Standings, round: int, rng: random.Random) -> list[tuple[str, str]]:
    """(baseline id, candidate id) pairs for one round.

    Only the top ``min(|Baseline|, |Candidate|)`` of the larger side play; the
    lowest-ranked surplus sits out. Round 1 matches players at random,
    later rounds match the i-th best Baseline with the i-th best Candidate.
    """
    base = standings.ordered(Source.BASELINE)
    cand = standings.ordered(Source.CANDIDATE)
    m = min(len(base), len(cand))
    base, cand = base[:m], cand[:m]
    if round == 1:
        cand = cand[:]
        rng.shuffle(cand)
    return list(zip(base, cand))


def render_judge_prompt(proposal_a: str, proposal_b: str, topic: Topic, model: str = "gpt-4",
                        decoding: Decoding = Decoding(temperature=0.0, max_tokens=512)) -> ChatRequest:
    if not proposal_a.strip() or not proposal_b.strip():
        raise ValueError("judge needs two nonempty proposals")
    prompt = render(
        PromptKind.JUDGE,
        {"topic_description": topic.description, "proposal_a": proposal_a, "proposal_b": proposal_b},
    )
    return ChatRequest(JUDGE_SYSTEM_PROMPT, prompt, decoding, model)


def split_judge_prompt(prompt: str) -> tuple[str, str]:
    """Recover the two proposal texts from a rendered judge prompt."""
    a_start = prompt.index("Proposal A:\n<<<\n") + len("Proposal A:\n<<<\n")
    sep = "\n>>>\n\nProposal B:\n<<<\n"
    a_end = prompt.index(sep, a_start)
    b_end = prompt.rindex("\n>>>")
    return prompt[a_start:a_end], prompt[a_end + len(sep) : b_end]


_FILLER = {"final", "answer", "verdict", "the", "better", "proposal", "is", "winner", "choice", "my"}


def parse_verdict(text: str) -> Verdict:
    """Read the verdict from the reply's last non-empty line."""
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise JudgeUnparseable("empty judge reply")
    words = [w.lower() for w in re.findall(r"[A-Za-z]+", lines[-1])]
    words = [w for w in words if w not in _FILLER]
    if words in (["a"], ["b"]):
        return Verdict(words[0].upper())
    raise JudgeUnparseable(f"last line {lines[-1]!r} is not a verdict")


def judge_once(gateway: Gateway, request: ChatRequest) -> Verdict:
    resp = gateway.complete(request)
    try:
        return parse_verdict(resp.text)
    except JudgeUnparseable:
        retry = ChatRequest(request.system_prompt, request.user_prompt + _REASK, request.decoding, request.model_name)
        return parse_verdict(gateway.complete(retry).text)


def precision_at_n(ranking: Sequence[RankedProposal], n: int) -> float:
    """Share of the top ``n`` ranked proposals that come from the Candidate side."""
    if n < 1:
        raise ValueError("n must be positive")
    if n > len(ranking):
        raise NTooLarge(f"ranking has {len(ranking)} entries, asked for top {n}")
    top = sorted(ranking, key=lambda r: r.rank)[:n]
    return sum(r.source is Source.CANDIDATE for r in top) / n


def rank(standings: Standings) -> list[RankedProposal]:
    order = sorted(standings.scores, key=lambda p: (-standings.scores[p], p))
    return [RankedProposal(p, standings.sources[p], standings.scores[p], i) for i, p in enumerate(order, 1)]


def _text(p: Any) -> str:
    return p if isinstance(p, str) else p.expanded_text


def run_tournament(spec: TournamentSpec, proposals: Mapping[str, Any], gateway: Gateway, max_workers: int = 8) -> TournamentResult:
    """Play ``spec.rounds`` rounds and rank every proposal.

    ``proposals`` maps ids to proposal texts (or objects with ``expanded_text``).
    Each pair's sides are assigned A/B at random; with ``order_swap`` the judge
    sees both presentations and a split decision is settled by a seeded coin.
    """
    missing = [p for p in (*spec.baseline_pool, *spec.candidate_pool) if p not in proposals]
    if missing:
        raise KeyError(f"no proposal text for {missing[:3]}")
    rng = random.Random(spec.seed)
    standings = Standings.start(spec.baseline_pool, spec.candidate_pool)
    matches: list[MatchRecord] = []

    def request(a: str, b: str) -> ChatRequest:
        return render_judge_prompt(_text(proposals[a]), _text(proposals[b]), spec.topic, spec.judge_model, spec.decoding)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        for rnd in range(1, spec.rounds + 1):
            pairs = []
            for base, cand in pair_round(standings, rnd, rng):
                pairs.append((base, cand) if rng.random() < 0.5 else (cand, base))
            first = list(pool.map(lambda ab: judge_once(gateway, request(*ab)), pairs))
            if spec.order_swap:
                second = list(pool.map(lambda ab: judge_once(gateway, request(ab[1], ab[0])), pairs))
            for i, (a, b) in enumerate(pairs):
                verdict, split = first[i], False
                if spec.order_swap:
                    # the swapped presentation shows b as "A"
                    swapped = Verdict.B if second[i] is Verdict.A else Verdict.A
                    if swapped is not verdict:
                        split = True
                        verdict = Verdict.A if rng.random() < 0.5 else Verdict.B
                match = MatchRecord(rnd, a, b, verdict, spec.order_swap, split)
                matches.append(match)
            # scores move only after the whole round is judged
            for match in matches[-len(pairs) :] if pairs else []:
                standings.scores[match.winner_id] += 1

    ranking = rank(standings)
    precision = {n: precision_at_n(ranking, n) for n in PRECISION_NS if n <= len(ranking)}
    cand_wins = sum(standings.sources[m.winner_id] is Source.CANDIDATE for m in matches)
    means = {}
    for source in Source:
        scores = [standings.scores[p] for p, s in standings.sources.items() if s is source]
        means[source.value] = sum(scores) / len(scores)
    return TournamentResult(
        matches=tuple(matches),
        ranking=tuple(ranking),
        precision_at=precision,
        win_rate_candidate=cand_wins / len(matches) if matches else 0.0,
        mean_score_by_source=means,
        meta={"topic": spec.topic.id, "rounds": spec.rounds, "order_swap": spec.order_swap, "seed": spec.seed},
    )
