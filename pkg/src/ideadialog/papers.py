"""Per-topic banks of related papers, cached on disk, sampled per trial."""

from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx

from ideadialog.core import PaperRecord, Topic, utc_timestamp
from ideadialog.storage import atomic_write_text

logger = logging.getLogger(__name__)

Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def epoch_clock() -> datetime:
    """Fixed clock for offline runs whose outputs must be byte-reproducible."""
    return datetime(1970, 1, 1, tzinfo=timezone.utc)


class BankError(Exception):
    pass


class RemoteUnavailable(BankError):
    pass


class EmptyResultSet(BankError):
    pass


class BankTooSmall(BankError):
    pass


@dataclass(frozen=True)
class PaperBank:
    topic_id: str
    records: tuple[PaperRecord, ...]
    built_at: str
    source: str  # "RemoteAPI" | "LocalCorpus"

    def __post_init__(self) -> None:
        ids = [r.paper_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise BankError(f"bank {self.topic_id!r} has duplicate paper ids")

    def __len__(self) -> int:
        return len(self.records)


class PaperSource(Protocol):
    name: str

    def fetch(self, topic: Topic, limit: int) -> list[dict]: ...


class LocalCorpus:
    """JSON-lines corpus: ``<dir>/<topic id>.jsonl`` or one file shared by every topic."""

    name = "LocalCorpus"

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def fetch(self, topic: Topic, limit: int) -> list[dict]:
        path = self.path / f"{topic.id}.jsonl" if self.path.is_dir() else self.path
        if not path.exists():
            raise RemoteUnavailable(f"no local corpus at {path}")
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if not self.path.is_dir():
            rows = [r for r in rows if r.get("topic", topic.id) == topic.id]
        return rows[:limit]


class SyntheticCorpus:
    """Deterministic made-up papers, for offline runs without a corpus."""

    name = "LocalCorpus"

    def fetch(self, topic: Topic, limit: int) -> list[dict]:
        rng = random.Random(f"synthetic:{topic.id}")
        words = topic.description.split()
        rows = []
        for i in range(limit):
            focus = " ".join(rng.sample(words, k=min(3, len(words))))
            rows.append(
                {
                    "paper_id": f"syn-{topic.id}-{i:04d}",
                    "title": f"On {focus}: study {i + 1}",
                    "abstract": f"We examine {topic.description} with an emphasis on {focus}. "
                    f"Results on {rng.randint(2, 12)} benchmarks suggest improvements of {rng.randint(1, 15)} points.",
                }
            )
        return rows


class SemanticScholarSource:
    """Relevance-ranked paper search against the Semantic Scholar Graph API."""

    name = "RemoteAPI"
    URL = "https://api.semanticscholar.org/graph/v1/paper/search"
    PAGE = 100

    def __init__(self, api_key: str | None = None, client: httpx.Client | None = None, max_attempts: int = 5,
                 sleep: Callable[[float], None] = time.sleep):
        self.client = client or httpx.Client(timeout=60)
        self.headers = {"x-api-key": api_key} if api_key else {}
        self.max_attempts = max_attempts
        self.sleep = sleep

    @classmethod
    def from_env(cls, key_env: str = "S2_API_KEY", **kw) -> SemanticScholarSource:
        return cls(os.environ.get(key_env), **kw)

    def _get(self, params: dict) -> dict:
        delay = 1.0
        for attempt in range(1, self.max_attempts + 1):
            try:
                r = self.client.get(self.URL, params=params, headers=self.headers)
            except httpx.TransportError as exc:
                err: str = str(exc)
            else:
                if r.status_code == 200:
                    return r.json()
                if r.status_code != 429 and r.status_code < 500:
                    raise RemoteUnavailable(f"paper search returned {r.status_code}: {r.text[:200]}")
                err = f"status {r.status_code}"
            if attempt < self.max_attempts:
                logger.warning("paper search failed (%s), retrying in %.0fs", err, delay)
                self.sleep(delay)
                delay *= 2
        raise RemoteUnavailable(f"paper search failed after {self.max_attempts} attempts: {err}")

    def fetch(self, topic: Topic, limit: int) -> list[dict]:
        rows: list[dict] = []
        offset = 0
        while len(rows) < limit:
            page = self._get(
                {"query": topic.description, "fields": "title,abstract", "offset": offset, "limit": min(self.PAGE, limit - len(rows))}
            )
            data = page.get("data") or []
            for d in data:
                # papers without abstracts give the model nothing to read
                if d.get("title") and d.get("abstract"):
                    rows.append({"paper_id": d["paperId"], "title": d["title"], "abstract": d["abstract"]})
            if not data or page.get("next") is None:
                break
            offset = page["next"]
        return rows[:limit]


def _unique(rows: Iterable[dict], fetched_at: str) -> list[PaperRecord]:
    seen: set[str] = set()
    out = []
    for row in rows:
        pid = str(row.get("paper_id") or row.get("paperId") or "")
        if not pid or pid in seen or not row.get("title"):
            continue
        seen.add(pid)
        out.append(PaperRecord(pid, row["title"], row.get("abstract") or "", row.get("fetched_at") or fetched_at))
    return out


def bank_path(cache_dir: Path, topic_id: str) -> Path:
    return cache_dir / f"{topic_id}.jsonl"


def load_bank(cache_dir: Path, topic_id: str) -> PaperBank | None:
    path = bank_path(cache_dir, topic_id)
    meta_path = path.with_suffix(".meta.json")
    if not path.exists() or not meta_path.exists():
        return None
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    records = tuple(PaperRecord.from_dict(json.loads(l)) for l in path.read_text(encoding="utf-8").splitlines() if l)
    return PaperBank(topic_id, records, meta["built_at"], meta["source"])


def save_bank(cache_dir: Path, bank: PaperBank) -> None:
    path = bank_path(cache_dir, bank.topic_id)
    lines = "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in bank.records)
    atomic_write_text(path, lines)
    meta = {"topic": bank.topic_id, "built_at": bank.built_at, "source": bank.source, "size": len(bank.records)}
    atomic_write_text(path.with_suffix(".meta.json"), json.dumps(meta, indent=2) + "\n")


def build_bank(topic: Topic, bank_size: int, source: PaperSource, cache_dir: str | Path, clock: Clock = utc_now) -> PaperBank:
    """Return the cached bank for ``topic``, fetching and caching it on first use."""
    cache_dir = Path(cache_dir)
    cached = load_bank(cache_dir, topic.id)
    if cached is not None:
        return cached
    built_at = utc_timestamp(clock())
    try:
        rows = source.fetch(topic, bank_size)
    except httpx.TransportError as exc:
        raise RemoteUnavailable(str(exc)) from exc
    records = _unique(rows, built_at)[:bank_size]
    if not records:
        raise EmptyResultSet(f"no papers found for topic {topic.id!r}")
    bank = PaperBank(topic.id, tuple(records), built_at, source.name)
    save_bank(cache_dir, bank)
    logger.info("built paper bank for %s: %d records from %s", topic.id, len(records), source.name)
    return bank


def sample_papers(bank: PaperBank, n: int, seed: int) -> list[PaperRecord]:
    """``n`` distinct records, chosen uniformly; a pure function of (bank order, n, seed)."""
    if n > len(bank.records):
        raise BankTooSmall(f"bank {bank.topic_id!r} has {len(bank.records)} papers, need {n}")
    return random.Random(seed).sample(bank.records, n)


def format_papers(papers: Sequence[PaperRecord]) -> str:
    if not papers:
        raise ValueError("no papers to format")
    return "\n".join(
        f"{i}. {' '.join(p.title.split())}: {' '.join(p.abstract.split())}" for i, p in enumerate(papers, 1)
    )
