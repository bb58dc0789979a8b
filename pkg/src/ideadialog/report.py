"""Aggregates dedup and tournament outputs into the three comparison tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from statistics import fmean
from typing import Any, Mapping

from ideadialog.core import DialogueConfig, RunManifest, Source, Variant
from ideadialog.dedup import DedupReport
from ideadialog.tournament import PRECISION_NS, TournamentResult


@dataclass
class ConfigSummary:
    config_id: str
    non_dup_ratio: float
    non_dup_by_topic: dict[str, float]
    precision_at: dict[int, float | None] = field(default_factory=dict)
    pooled_precision_at: dict[int, float | None] = field(default_factory=dict)
    win_rate: float | None = None
    mean_score: float | None = None
    baseline_mean_score: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_id": self.config_id,
            "non_dup_ratio": self.non_dup_ratio,
            "non_dup_by_topic": self.non_dup_by_topic,
            "precision_at": {str(n): v for n, v in self.precision_at.items()},
            "pooled_precision_at": {str(n): v for n, v in self.pooled_precision_at.items()},
            "win_rate": self.win_rate,
            "mean_score": self.mean_score,
            "baseline_mean_score": self.baseline_mean_score,
        }


@dataclass
class Table:
    name: str
    title: str
    first_column: str
    rows: list[tuple[str, str]]  # (row label, config id)


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


@dataclass
class Report:
    summaries: dict[str, ConfigSummary]
    tables: list[Table]
    baseline_id: str

    def row_cells(self, config_id: str) -> list[str]:
        s = self.summaries[config_id]
        if config_id == self.baseline_id:
            precision = "-"
        else:
            precision = " / ".join(_fmt(s.precision_at.get(n)) for n in PRECISION_NS)
        return [_fmt(s.non_dup_ratio), precision, _fmt(s.win_rate), _fmt(s.mean_score)]

    def text(self) -> str:
        header = ["Non-Dup. Ratio", "Precision@(10/20/40)", "Win rate", "Mean score"]
        out = []
        for i, table in enumerate(self.tables, 1):
            lines = [[table.first_column, *header]] + [[label, *self.row_cells(cid)] for label, cid in table.rows]
            widths = [max(len(row[c]) for row in lines) for c in range(len(header) + 1)]
            out.append(f"Table {i}: {table.title}")
            for row in lines:
                out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            out.append("")
        return "\n".join(out)

    def csv_files(self) -> dict[str, str]:
        files = {}
        for i, table in enumerate(self.tables, 1):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["row", "config", "non_dup_ratio", *(f"precision_at_{n}" for n in PRECISION_NS), "win_rate", "mean_score"])
            for label, cid in table.rows:
                s = self.summaries[cid]
                prec = ["-"] * len(PRECISION_NS) if cid == self.baseline_id else [_fmt(s.precision_at.get(n)) for n in PRECISION_NS]
                w.writerow([label, cid, _fmt(s.non_dup_ratio), *prec, _fmt(s.win_rate), _fmt(s.mean_score)])
            files[f"table{i}_{table.name}.csv"] = buf.getvalue()
        return files

    def to_dict(self) -> dict[str, Any]:
        return {
            "baseline_config": self.baseline_id,
            "configs": {cid: s.to_dict() for cid, s in self.summaries.items()},
            "tables": [
                {"title": t.title, "columns": [t.first_column, "Non-Dup. Ratio", "Precision@(10/20/40)", "Win rate", "Mean score"],
                 "rows": [[label, *self.row_cells(cid)] for label, cid in t.rows]}
                for t in self.tables
            ],
        }


def _pooled_precision(results: list[TournamentResult], n: int) -> float | None:
    entries = sorted(
        ((r.meta.get("topic", str(i)), e) for i, r in enumerate(results) for e in r.ranking),
        key=lambda te: (-te[1].score, te[0], te[1].proposal_id),
    )
    if n > len(entries):
        return None
    return sum(e.source is Source.CANDIDATE for _, e in entries[:n]) / n


def _tables(configs: list[DialogueConfig], baseline_id: str) -> list[Table]:
    by_variant: dict[Variant, list[DialogueConfig]] = {}
    for c in configs:
        by_variant.setdefault(c.variant, []).append(c)
    single = [c.config_id for c in by_variant.get(Variant.SINGLE, [])[:1]]

    def head(axis: str) -> list[tuple[str, str]]:
        rows = [(f"Single ({axis}=0)", cid) for cid in single]
        return rows + [(f"Baseline ({axis}=1)", baseline_id)]

    parallel = sorted(by_variant.get(Variant.PARALLEL, []), key=lambda c: c.parallel_N)
    depth = sorted(by_variant.get(Variant.ITERATIVE, []), key=lambda c: c.depth_L)
    diverse = [("Baseline", baseline_id)]
    for variant, label in ((Variant.DIVERSE_CRITIC, "Diverse Critic"), (Variant.DIVERSE_PROPOSER, "Diverse Prop/Rev")):
        group = by_variant.get(variant, [])
        for c in group:
            suffix = "" if len(group) == 1 else f" ({c.config_id})"
            diverse.append((label + suffix, c.config_id))
    return [
        Table("parallelism", "Impact of agent parallelism (number of critics)", "N",
              head("N") + [(str(c.parallel_N), c.config_id) for c in parallel]),
        Table("depth", "Impact of interaction depth (number of critique-revision turns)", "L (turns)",
              head("L") + [(str(c.depth_L), c.config_id) for c in depth]),
        Table("diversity", "Impact of persona diversity", "Configuration", diverse),
    ]


def build_report(
    manifest: RunManifest,
    dedups: Mapping[tuple[str, str], DedupReport],
    tournaments: Mapping[tuple[str, str], TournamentResult],
) -> Report:
    """Macro-average each metric over topics and lay the results out as tables.

    Precision is also computed on a single ranking pooled across topics
    (``pooled_precision_at``), since per-topic averaging is only one reading.
    """
    baseline = next(c for c in manifest.configs if c.variant is Variant.BASELINE)
    topics = [t.id for t in manifest.topics]
    summaries: dict[str, ConfigSummary] = {}
    for cfg in manifest.configs:
        cid = cfg.config_id
        by_topic = {t: dedups[(t, cid)].non_duplicate_ratio for t in topics}
        s = ConfigSummary(cid, fmean(by_topic.values()), by_topic)
        results = [tournaments[(t, cid)] for t in topics if (t, cid) in tournaments]
        if cid != baseline.config_id and results:
            for n in PRECISION_NS:
                vals = [r.precision_at[n] for r in results if n in r.precision_at]
                s.precision_at[n] = fmean(vals) if vals else None
                s.pooled_precision_at[n] = _pooled_precision(results, n)
            s.win_rate = fmean(r.win_rate_candidate for r in results)
            s.mean_score = fmean(r.mean_score_by_source[Source.CANDIDATE.value] for r in results)
            s.baseline_mean_score = fmean(r.mean_score_by_source[Source.BASELINE.value] for r in results)
        summaries[cid] = s
    # Baseline's own mean score: its side of every tournament, averaged.
    base_means = [s.baseline_mean_score for s in summaries.values() if s.baseline_mean_score is not None]
    if base_means:
        summaries[baseline.config_id].mean_score = fmean(base_means)
    return Report(summaries, _tables(list(manifest.configs), baseline.config_id), baseline.config_id)
