"""Embedding-based near-duplicate filter and the Non-Duplicate Ratio."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from ideadialog.core import SECTION_ORDER, IdeaRecord
from ideadialog.gateway import Gateway

DEFAULT_THRESHOLD = 0.8


class DedupError(ValueError):
    pass


class DimensionMismatch(DedupError):
    pass


class ZeroVector(DedupError):
    pass


class MissingEmbedding(DedupError):
    pass


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na2, nb2 = float(np.dot(a, a)), float(np.dot(b, b))
    if na2 == 0 or nb2 == 0:
        raise ZeroVector("cosine of a zero vector is undefined")
    # one sqrt of the product keeps cosine(v, v) and cosine(2v, v) exactly 1
    return float(np.clip(np.dot(a, b) / np.sqrt(na2 * nb2), -1.0, 1.0))


@dataclass(frozen=True)
class DuplicateEdge:
    dropped_id: str
    kept_id: str
    similarity: float


@dataclass(frozen=True)
class DedupReport:
    pool_id: tuple[str, str]
    total: int
    survivors: int
    non_duplicate_ratio: float
    edges: tuple[DuplicateEdge, ...]
    threshold: float = DEFAULT_THRESHOLD

    def to_dict(self) -> dict[str, Any]:
        return {
            "pool_id": {"topic": self.pool_id[0], "config": self.pool_id[1]},
            "threshold": self.threshold,
            "total": self.total,
            "survivors": self.survivors,
            "non_duplicate_ratio": self.non_duplicate_ratio,
            "edges": [{"dropped": e.dropped_id, "kept": e.kept_id, "similarity": e.similarity} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DedupReport:
        return cls(
            (d["pool_id"]["topic"], d["pool_id"]["config"]),
            int(d["total"]),
            int(d["survivors"]),
            float(d["non_duplicate_ratio"]),
            tuple(DuplicateEdge(e["dropped"], e["kept"], float(e["similarity"])) for e in d["edges"]),
            float(d.get("threshold", DEFAULT_THRESHOLD)),
        )


def dedup(ideas: Sequence[IdeaRecord], threshold: float = DEFAULT_THRESHOLD) -> tuple[list[IdeaRecord], DedupReport]:
    """Greedy keep-first filter over the canonical pool order.

    Ideas are scanned by (topic, config, seed, index); one is kept iff its
    highest cosine against the already-kept ideas is at most ``threshold``.
    Returns the ideas (canonical order, ``survived_dedup`` set) and a report.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if not ideas:
        raise ValueError("cannot deduplicate an empty pool")
    ordered = sorted(ideas, key=lambda i: i.origin.sort_key())
    missing = [i.idea_id for i in ordered if i.embedding is None]
    if missing:
        raise MissingEmbedding(f"{len(missing)} ideas lack embeddings, e.g. {missing[0]}")
    mat = np.asarray([i.embedding for i in ordered], dtype=np.float64)
    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)

    kept_rows: list[int] = []
    out: list[IdeaRecord] = []
    edges: list[DuplicateEdge] = []
    for row, idea in enumerate(ordered):
        if kept_rows:
            sims = mat[kept_rows] @ mat[row]
            best = int(np.argmax(sims))
            best_sim = float(sims[best])
        else:
            best_sim = -1.0
        if best_sim > threshold:
            edges.append(DuplicateEdge(idea.idea_id, ordered[kept_rows[best]].idea_id, best_sim))
            out.append(replace(idea, survived_dedup=False))
        else:
            kept_rows.append(row)
            out.append(replace(idea, survived_dedup=True))

    first = ordered[0].origin
    report = DedupReport(
        pool_id=(first.topic, first.config),
        total=len(ordered),
        survivors=len(kept_rows),
        non_duplicate_ratio=len(kept_rows) / len(ordered),
        edges=tuple(edges),
        threshold=threshold,
    )
    return out, report


def embedding_text(idea: IdeaRecord) -> str:
    """``"<name>. <Problem> <ExistingMethods> ... <ExperimentPlan>"`` in fixed section order."""
    parts = [idea.body[s] for s in SECTION_ORDER if idea.body[s]]
    return f"{idea.idea_name}. " + " ".join(parts)


def embed_ideas(ideas: Sequence[IdeaRecord], gateway: Gateway, batch_size: int = 64) -> list[IdeaRecord]:
    out: list[IdeaRecord] = []
    for start in range(0, len(ideas), batch_size):
        batch = ideas[start : start + batch_size]
        vectors = gateway.embed([embedding_text(i) for i in batch])
        out.extend(replace(i, embedding=tuple(float(x) for x in v)) for i, v in zip(batch, vectors))
    return out


def embed_idea(idea: IdeaRecord, gateway: Gateway) -> IdeaRecord:
    return embed_ideas([idea], gateway)[0]
