"""Shared helpers for run-directory tests."""

import os
import signal
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

from ideadialog.core import ProviderSettings, RunManifest


def mock_manifest(topics=("bias", "math"), configs=("single", "baseline", "parallel-N3"), seeds=2, **kw):
    m = RunManifest()
    return replace(
        m,
        topics=tuple(t for t in m.topics if t.id in topics),
        configs=tuple(c for c in m.configs if c.config_id in configs),
        seeds_per_cell=seeds,
        provider=ProviderSettings(mock=True),
        **kw,
    )


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "ideadialog", *map(str, args)], capture_output=True, text=True, env=env)


def run_and_kill(args, run_dir, min_transcripts, timeout=60.0):
    """Start the CLI, SIGKILL it once ``min_transcripts`` transcripts exist; return how many existed."""
    proc = subprocess.Popen([sys.executable, "-m", "ideadialog", *map(str, args)],
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.monotonic() + timeout
    try:
        while time.monotonic() < deadline:
            done = len(list(Path(run_dir).glob("transcripts/*/*/*.json")))
            if done >= min_transcripts or proc.poll() is not None:
                break
            time.sleep(0.01)
    finally:
        if proc.poll() is None:
            os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
    return len(list(Path(run_dir).glob("transcripts/*/*/*.json"))), proc.returncode


# acceptance bookkeeping: one PASS/FAIL line per criterion, printed at session end
ACCEPTANCE_RESULTS: list[tuple[int, str, str, str]] = []


class criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_RESULTS.append((self.number, status, self.title, detail))
        return False
