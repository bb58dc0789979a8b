"""Grid orchestration and the on-disk run directory.

Layout (``layout_version`` 1)::

    manifest.json                       settings, completed cells + checksums, failure ledger
    banks/<topic>.jsonl                 paper bank (+ .meta.json)
    transcripts/<topic>/<config>/seed-NN.json
    dedup/<topic>/<config>.json         DedupReport
    dedup/<topic>/<config>.ideas.jsonl  ideas with embeddings and survival flags
    proposals/<topic>/<config>.jsonl
    tournaments/<topic>/<config>.json   TournamentResult vs Baseline
    report/                             report.json, tables.txt, table*.csv

Every file is written to a temp name and renamed, so a killed run never leaves
a half-written artifact that a later run would mistake for a finished one.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from ideadialog import storage
from ideadialog.core import (
    Decoding,
    DialogueConfig,
    IdeaRecord,
    ProviderSettings,
    RunManifest,
    Topic,
    Transcript,
    Variant,
)
from ideadialog.dedup import DedupReport, dedup, embed_ideas
from ideadialog.engine import TrialFailed, TrialSettings, run_trial
from ideadialog.expander import Proposal, expand_pool
from ideadialog.gateway import Gateway, OpenAICompatTransport, SplitTransport
from ideadialog.mock import MockProvider
from ideadialog.papers import (
    LocalCorpus,
    PaperBank,
    SemanticScholarSource,
    SyntheticCorpus,
    build_bank,
    epoch_clock,
    utc_now,
)
from ideadialog.report import Report, build_report
from ideadialog.tournament import TournamentResult, TournamentSpec, run_tournament

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1


class StageError(Exception):
    pass


class MissingStage(StageError):
    """A stage's inputs are absent; the message names the missing artifact."""


# --- manifest (de)serialization ---------------------------------------------


def manifest_to_dict(m: RunManifest) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(m):
        v = getattr(m, f.name)
        if f.name == "topics":
            v = [{"id": t.id, "description": t.description} for t in v]
        elif f.name == "configs":
            v = [c.to_dict() for c in v]
        elif isinstance(v, Decoding):
            v = v.to_dict()
        elif isinstance(v, ProviderSettings):
            v = {pf.name: getattr(v, pf.name) for pf in fields(v)}
        out[f.name] = v
    return out


def manifest_from_dict(d: Mapping[str, Any], base: RunManifest | None = None) -> RunManifest:
    """Build a manifest from ``d``; keys it omits keep their values from ``base``."""
    base = base or RunManifest()
    kw: dict[str, Any] = {}
    names = {f.name for f in fields(RunManifest)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
    for key, v in d.items():
        if key == "topics":
            v = tuple(Topic(t["id"], t["description"]) for t in v)
        elif key == "configs":
            v = tuple(DialogueConfig.from_dict(c) for c in v)
        elif key in ("decoding", "judge_decoding"):
            v = Decoding(**{**getattr(base, key).to_dict(), **v})
        elif key == "provider":
            v = replace(base.provider, **v)
        kw[key] = v
    return replace(base, **kw)


def load_manifest(path: str | Path) -> RunManifest:
    return manifest_from_dict(storage.read_json(path))


# --- run directory -----------------------------------------------------------


def cell_key(topic: str, config: str, seed: int) -> str:
    return f"{topic}/{config}/s{seed:02d}"


class RunDirectory:
    """Paths plus the single serialized writer of ``manifest.json``."""

    def __init__(self, root: str | Path, manifest: RunManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._lock = threading.Lock()
        self.cells: dict[str, dict[str, str]] = {}
        self.failures: dict[str, dict[str, Any]] = {}

    @classmethod
    def open(cls, root: str | Path, manifest: RunManifest | None = None) -> RunDirectory:
        """Open an existing run directory, or create one for ``manifest``."""
        root = Path(root)
        path = root / "manifest.json"
        if path.exists():
            doc = storage.read_json(path)
            if doc.get("layout_version") != LAYOUT_VERSION:
                raise StageError(f"{path} has layout version {doc.get('layout_version')}, expected {LAYOUT_VERSION}")
            stored = manifest_from_dict(doc["manifest"])
            if manifest is not None and manifest_to_dict(manifest) != manifest_to_dict(stored):
                raise StageError(f"{root} was created with a different manifest; use a new --run-dir")
            run = cls(root, stored)
            run.cells = doc.get("cells", {})
            run.failures = {f["key"]: f for f in doc.get("failures", [])}
            removed = storage.remove_stale_temps(root)
            if removed:
                logger.info("removed %d partial files left by an interrupted run", removed)
            return run
        if manifest is None:
            raise StageError(f"{root} has no manifest.json; pass --manifest or run a generating command first")
        problems = manifest.problems()
        if problems:
            raise StageError("invalid manifest: " + "; ".join(problems))
        run = cls(root, manifest)
        run._save()
        return run

    def _save(self) -> None:
        doc = {
            "layout_version": LAYOUT_VERSION,
            "manifest": manifest_to_dict(self.manifest),
            "cells": {k: self.cells[k] for k in sorted(self.cells)},
            "failures": [self.failures[k] for k in sorted(self.failures)],
        }
        storage.write_json(self.root / "manifest.json", doc)

    def mark_complete(self, key: str, rel_path: str, sha256: str) -> None:
        with self._lock:
            self.cells[key] = {"path": rel_path, "sha256": sha256}
            self.failures.pop(key, None)
            self._save()

    def mark_failed(self, key: str, attempts: int, error: str, stage: str = "generate") -> None:
        with self._lock:
            self.failures[key] = {"key": key, "stage": stage, "attempts": attempts, "error": error}
            self._save()

    def clear_failures(self, stage: str) -> None:
        with self._lock:
            self.failures = {k: f for k, f in self.failures.items() if f["stage"] != stage}
            self._save()

    def is_complete(self, key: str) -> bool:
        entry = self.cells.get(key)
        return entry is not None and (self.root / entry["path"]).exists()

    # paths
    def bank_dir(self) -> Path:
        return self.root / "banks"

    def transcript_path(self, topic: str, config: str, seed: int) -> Path:
        return self.root / "transcripts" / topic / config / f"seed-{seed:02d}.json"

    def dedup_path(self, topic: str, config: str) -> Path:
        return self.root / "dedup" / topic / f"{config}.json"

    def dedup_ideas_path(self, topic: str, config: str) -> Path:
        return self.root / "dedup" / topic / f"{config}.ideas.jsonl"

    def proposals_path(self, topic: str, config: str) -> Path:
        return self.root / "proposals" / topic / f"{config}.jsonl"

    def tournament_path(self, topic: str, config: str) -> Path:
        return self.root / "tournaments" / topic / f"{config}.json"

    def report_dir(self) -> Path:
        return self.root / "report"

    def pools(self) -> list[tuple[Topic, DialogueConfig]]:
        return [(t, c) for t in self.manifest.topics for c in self.manifest.configs]

    def load_transcript(self, topic: str, config: str, seed: int) -> Transcript:
        return Transcript.from_dict(storage.read_json(self.transcript_path(topic, config, seed)))


# --- providers -------------------------------------------------------------


def make_gateway(manifest: RunManifest, concurrency: int = 8, mock_delay_s: float = 0.0, **mock_kw: Any) -> Gateway:
    p = manifest.provider
    if p.mock:
        transport: Any = MockProvider(p.mock_seed, p.mock_embedding_dim, delay_s=mock_delay_s, **mock_kw)
    else:
        transport = OpenAICompatTransport.from_env(
            p.base_url, p.api_key_env, embedding_model=manifest.embedding_model, timeout_s=p.timeout_s
        )
        if p.embedding_base_url:
            embedder = OpenAICompatTransport.from_env(
                p.embedding_base_url, p.embedding_api_key_env or p.api_key_env,
                embedding_model=manifest.embedding_model, timeout_s=p.timeout_s,
            )
            transport = SplitTransport(transport, embedder)
    gw = Gateway(transport, max_concurrency=concurrency)
    gw.backoff.max_attempts = p.max_attempts
    return gw


def ensure_banks(run: RunDirectory) -> dict[str, PaperBank]:
    m = run.manifest
    if m.corpus_dir:
        source: Any = LocalCorpus(m.corpus_dir)
    elif m.provider.mock:
        source = SyntheticCorpus()
    else:
        source = SemanticScholarSource.from_env(m.semantic_scholar_key_env)
    clock = epoch_clock if m.provider.mock else utc_now
    return {t.id: build_bank(t, m.bank_size, source, run.bank_dir(), clock) for t in m.topics}


# --- generation --------------------------------------------------------------


@dataclass
class GridOutcome:
    completed: int
    executed: int
    failed: list[str]
    ideas: int


def _trial_settings(m: RunManifest, existing: list[str]) -> TrialSettings:
    return TrialSettings(m.decoding, m.generation_model, m.method, m.examples, tuple(existing))


def run_grid(run: RunDirectory, gateway: Gateway, concurrency: int = 8, resume: bool = True) -> GridOutcome:
    """Execute every topic x config x seed cell not already complete."""
    m = run.manifest
    banks = ensure_banks(run)
    executed = 0
    count_lock = threading.Lock()
    if not resume:
        with run._lock:
            run.cells.clear()
            run.failures.clear()
            run._save()

    def do_cell(topic: Topic, cfg: DialogueConfig, seed: int, existing: list[str]) -> Transcript | None:
        nonlocal executed
        key = cell_key(topic.id, cfg.config_id, seed)
        path = run.transcript_path(topic.id, cfg.config_id, seed)
        rel = path.relative_to(run.root).as_posix()
        if run.is_complete(key):
            return run.load_transcript(topic.id, cfg.config_id, seed)
        if resume and path.exists():
            # written before the process died, but never recorded
            run.mark_complete(key, rel, storage.file_sha256(path))
            return run.load_transcript(topic.id, cfg.config_id, seed)
        error = ""
        for attempt in range(1, m.cell_attempts + 1):
            try:
                transcript = run_trial(cfg, topic, seed, gateway, banks[topic.id], _trial_settings(m, existing))
            except TrialFailed as exc:
                error = str(exc)
                logger.warning("cell %s attempt %d failed: %s", key, attempt, exc)
                continue
            sha = storage.write_json(path, transcript.to_dict())
            run.mark_complete(key, rel, sha)
            with count_lock:
                executed += 1
            return transcript
        run.mark_failed(key, m.cell_attempts, error)
        return None

    def do_pool(topic: Topic, cfg: DialogueConfig) -> None:
        names: list[str] = []
        for seed in m.seeds:
            existing = names[-m.max_existing_ideas :] if m.cumulative_existing_ideas else []
            t = do_cell(topic, cfg, seed, existing)
            if t is not None:
                names.extend(i.idea_name for i in t.final_ideas)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        if m.cumulative_existing_ideas:
            # seeds within a pool see earlier seeds' idea names, so they run in order
            futures = [pool.submit(do_pool, t, c) for t, c in run.pools()]
        else:
            futures = [pool.submit(do_cell, t, c, s, []) for t, c in run.pools() for s in m.seeds]
        for f in futures:
            f.result()

    failed = sorted(k for k, f in run.failures.items() if f["stage"] == "generate")
    completed = sum(
        run.is_complete(cell_key(t.id, c.config_id, s)) for t, c in run.pools() for s in m.seeds
    )
    ideas = sum(c.ideas_per_trial_k for t, c in run.pools() for s in m.seeds if run.is_complete(cell_key(t.id, c.config_id, s)))
    return GridOutcome(completed, executed, failed, ideas)


def pool_ideas(run: RunDirectory, topic: Topic, cfg: DialogueConfig) -> list[IdeaRecord]:
    missing = [s for s in run.manifest.seeds if not run.is_complete(cell_key(topic.id, cfg.config_id, s))]
    if missing:
        raise MissingStage(
            f"generation incomplete for {topic.id}/{cfg.config_id}: "
            f"missing {run.transcript_path(topic.id, cfg.config_id, missing[0]).relative_to(run.root)}"
            + (f" and {len(missing) - 1} more" if len(missing) > 1 else "")
        )
    ideas: list[IdeaRecord] = []
    for s in run.manifest.seeds:
        ideas.extend(run.load_transcript(topic.id, cfg.config_id, s).final_ideas)
    return ideas


# --- downstream stages ---------------------------------------------------------


def dedup_stage(run: RunDirectory, gateway: Gateway, resume: bool = True) -> dict[tuple[str, str], DedupReport]:
    reports = {}
    for topic, cfg in run.pools():
        path = run.dedup_path(topic.id, cfg.config_id)
        if resume and path.exists() and run.dedup_ideas_path(topic.id, cfg.config_id).exists():
            reports[(topic.id, cfg.config_id)] = DedupReport.from_dict(storage.read_json(path))
            continue
        embedded = embed_ideas(pool_ideas(run, topic, cfg), gateway)
        marked, report = dedup(embedded, run.manifest.dedup_threshold)
        storage.write_jsonl(run.dedup_ideas_path(topic.id, cfg.config_id), (i.to_dict() for i in marked))
        storage.write_json(path, report.to_dict())
        reports[(topic.id, cfg.config_id)] = report
        logger.info("dedup %s/%s: %d/%d survive", topic.id, cfg.config_id, report.survivors, report.total)
    return reports


def _load_dedup_ideas(run: RunDirectory, topic: str, config: str) -> list[IdeaRecord]:
    path = run.dedup_ideas_path(topic, config)
    if not path.exists() or not run.dedup_path(topic, config).exists():
        raise MissingStage(f"dedup output missing: {path.relative_to(run.root)}")
    return [IdeaRecord.from_dict(d) for d in storage.read_jsonl(path)]


def load_proposals(run: RunDirectory, topic: str, config: str) -> list[Proposal]:
    path = run.proposals_path(topic, config)
    if not path.exists():
        raise MissingStage(f"proposals missing: {path.relative_to(run.root)}")
    return [Proposal.from_dict(d) for d in storage.read_jsonl(path)]


def expand_stage(run: RunDirectory, gateway: Gateway, concurrency: int = 8, resume: bool = True) -> int:
    """Expand every pool's survivors; returns the number of new expansion calls."""
    m = run.manifest
    before = gateway.calls
    for topic, cfg in run.pools():
        ideas = _load_dedup_ideas(run, topic.id, cfg.config_id)
        path = run.proposals_path(topic.id, cfg.config_id)
        cached = {p.idea_id: p for p in load_proposals(run, topic.id, cfg.config_id)} if resume and path.exists() else {}
        survivors = [i for i in ideas if i.survived_dedup]
        if cached and all(i.idea_id in cached for i in survivors):
            continue
        proposals = expand_pool(ideas, topic, gateway, m.decoding, m.generation_model, cached, concurrency)
        storage.write_jsonl(path, (p.to_dict() for p in proposals))
    return gateway.calls - before


def baseline_config(m: RunManifest) -> DialogueConfig:
    for c in m.configs:
        if c.variant is Variant.BASELINE:
            return c
    raise StageError("ranking needs a Baseline configuration in the manifest")


def tournament_seed(m: RunManifest, topic: str, config: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{m.tournament_seed}:{topic}:{config}".encode()).digest()[:8], "big")


def rank_stage(run: RunDirectory, gateway: Gateway, concurrency: int = 8, resume: bool = True) -> dict[tuple[str, str], TournamentResult]:
    m = run.manifest
    base_cfg = baseline_config(m)
    results = {}
    for topic in m.topics:
        base = load_proposals(run, topic.id, base_cfg.config_id)
        for cfg in m.configs:
            if cfg.config_id == base_cfg.config_id:
                continue
            path = run.tournament_path(topic.id, cfg.config_id)
            if resume and path.exists():
                results[(topic.id, cfg.config_id)] = TournamentResult.from_dict(storage.read_json(path))
                continue
            cand = load_proposals(run, topic.id, cfg.config_id)
            spec = TournamentSpec(
                topic,
                tuple(p.proposal_id for p in base),
                tuple(p.proposal_id for p in cand),
                rounds=m.tournament_rounds,
                judge_model=m.judge_model,
                order_swap=m.order_swap,
                seed=tournament_seed(m, topic.id, cfg.config_id),
                decoding=m.judge_decoding,
            )
            proposals = {p.proposal_id: p for p in (*base, *cand)}
            result = run_tournament(spec, proposals, gateway, concurrency)
            result.meta.update({"baseline_config": base_cfg.config_id, "candidate_config": cfg.config_id})
            storage.write_json(path, result.to_dict())
            results[(topic.id, cfg.config_id)] = result
            logger.info("ranked %s/%s: candidate win rate %.2f", topic.id, cfg.config_id, result.win_rate_candidate)
    return results


def report_stage(run: RunDirectory) -> Report:
    m = run.manifest
    dedups: dict[tuple[str, str], DedupReport] = {}
    tournaments: dict[tuple[str, str], TournamentResult] = {}
    base_id = baseline_config(m).config_id
    for topic, cfg in run.pools():
        path = run.dedup_path(topic.id, cfg.config_id)
        if not path.exists():
            raise MissingStage(f"dedup report missing: {path.relative_to(run.root)}")
        dedups[(topic.id, cfg.config_id)] = DedupReport.from_dict(storage.read_json(path))
        if cfg.config_id == base_id:
            continue
        tpath = run.tournament_path(topic.id, cfg.config_id)
        if not tpath.exists():
            raise MissingStage(f"tournament result missing: {tpath.relative_to(run.root)}")
        tournaments[(topic.id, cfg.config_id)] = TournamentResult.from_dict(storage.read_json(tpath))
    report = build_report(m, dedups, tournaments)
    out = run.report_dir()
    storage.write_json(out / "report.json", report.to_dict())
    storage.atomic_write_text(out / "tables.txt", report.text())
    for name, text in report.csv_files().items():
        storage.atomic_write_text(out / name, text)
    return report

