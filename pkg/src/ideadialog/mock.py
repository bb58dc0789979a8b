"""Offline provider whose replies are pure functions of (seed, prompt).

The mock recognizes each template by a marker sentence and answers in the
shape the real pipeline expects, so whole grids run with no network. Every
idea and revision it writes carries a ``[ref:<nonce>]`` tag, which lets tests
follow one reply's text into later prompts.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
from typing import Callable, Sequence

import numpy as np

from ideadialog.core import SECTION_ORDER, Section, TokenUsage
from ideadialog.gateway import ChatRequest, ChatResponse
from ideadialog.prompts import IdeaBody, UnparseableReply, extract_json_object, split_sections

_ADJECTIVES = (
    "Contrastive", "Recursive", "Adversarial", "Socratic", "Counterfactual", "Hierarchical", "Reflective",
    "Stochastic", "Modular", "Analogical", "Dialectic", "Calibrated", "Layered", "Evolving", "Anchored",
)
_NOUNS = (
    "Perspective", "Rehearsal", "Decomposition", "Negotiation", "Retelling", "Scaffolding", "Voting",
    "Self-Questioning", "Role Swapping", "Evidence Weaving", "Persona Chaining", "Memory Replay",
)
_CATEGORY_LABELS = (
    "Missing dataset detail", "Involving humans", "Missing metric detail", "Missing prompt detail", "Test cases",
)

_CONCEPT_RE = re.compile(rf"({'|'.join(_ADJECTIVES)}) ({'|'.join(map(re.escape, _NOUNS))}) Prompting")
REF_RE = re.compile(r"\[ref:([0-9a-f]{10})\]")

JudgePolicy = Callable[[str, str], str]


def _digest(*parts: object) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return h.digest()


def _between(text: str, start: str, end: str) -> str | None:
    i = text.find(start)
    if i < 0:
        return None
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j < 0 else text[i:j]


def nonces(text: str) -> list[str]:
    return REF_RE.findall(text)


class MockProvider:
    """Deterministic chat + embedding transport.

    ``judge`` replaces the default hash-based verdict; it receives the two
    proposal texts in presentation order and returns ``"A"`` or ``"B"``.
    ``delay_s`` makes every call sleep, which interruption tests use to catch
    a run halfway; reported latencies stay deterministic regardless.
    """

    def __init__(self, seed: int = 0, embedding_dim: int = 384, judge: JudgePolicy | None = None, delay_s: float = 0.0):
        self.seed = seed
        self.embedding_dim = embedding_dim
        self.judge = judge
        self.delay_s = delay_s

    # chat -----------------------------------------------------------------

    def chat(self, request: ChatRequest) -> ChatResponse:
        if self.delay_s:
            time.sleep(self.delay_s)
        digest = _digest(self.seed, request.model_name, request.system_prompt, request.user_prompt)
        rng = random.Random(digest)
        nonce = hashlib.sha256(digest).hexdigest()[:10]
        text = self._reply(request.user_prompt, rng, nonce)
        usage = TokenUsage(len(request.user_prompt.split()) + len(request.system_prompt.split()), len(text.split()))
        return ChatResponse(text, usage, latency_ms=200 + digest[0] * 4)

    def _reply(self, prompt: str, rng: random.Random, nonce: str) -> str:
        if "Below are two proposals, labeled A and B." in prompt:
            return self._judge(prompt, rng)
        if "You previously proposed the following research ideas" in prompt:
            return self._revise(prompt, rng, nonce)
        if "You need to provide some constructive feedback" in prompt:
            return self._critique(prompt, rng)
        if "You are expanding a short research idea" in prompt:
            return self._expand(prompt, rng, nonce)
        if "Now I want you to help me brainstorm" in prompt:
            m = re.search(r"You should generate (\d+) different ideas", prompt)
            k = int(m.group(1)) if m else 5
            topic = _between(prompt, "on the topic of: ", ".\n") or "the topic"
            return self._ideas(k, topic, rng, nonce)
        return f"Mock reply [ref:{nonce}]."

    def _ideas(self, k: int, topic: str, rng: random.Random, nonce: str) -> str:
        ideas: dict[str, str] = {}
        while len(ideas) < k:
            name = f"{rng.choice(_ADJECTIVES)} {rng.choice(_NOUNS)} Prompting {rng.getrandbits(24):06x}"
            if name in ideas:
                continue
            ref = hashlib.sha256(f"{nonce}:{len(ideas)}".encode()).hexdigest()[:10]
            noun = name.split(" Prompting")[0].lower()
            body = IdeaBody(
                {
                    Section.PROBLEM: f"Large language models still fall short on {topic} when inputs need {noun}.",
                    Section.EXISTING_METHODS: f"Zero-shot and chain-of-thought prompting; benchmark suite #{rng.randint(1, 99)}.",
                    Section.MOTIVATION: f"Making the model practice {noun} exposes failure cases before it answers.",
                    Section.PROPOSED_METHOD: (
                        f"Prompt the model in {rng.randint(2, 5)} stages of {noun}, each stage reading the previous "
                        f"stage's output. [ref:{ref}]"
                    ),
                    Section.EXPERIMENT_PLAN: f"Compare against the baselines with accuracy and calibration error over {rng.randint(3, 9)} datasets.",
                }
            )
            ideas[name] = body.text()
        out = json.dumps(ideas, indent=2)
        if rng.random() < 0.3:
            out = f"```json\n{out}\n```"
        return out

    def _critique(self, prompt: str, rng: random.Random) -> str:
        proposal = _between(prompt, "The project proposal (containing multiple ideas) is\n\n", "\n\nYou should raise") or ""
        sentences = [s.strip() for s in re.split(r"(?<=\.)\s+", proposal) if len(s.strip()) > 20 and '"' not in s]
        lines = []
        for _ in range(rng.randint(1, 5)):
            label = rng.choice(_CATEGORY_LABELS)
            quote = rng.choice(sentences)[:120].strip() if sentences else "the proposed method"
            lines.append(f'- {label}: "{quote}" - please make this concrete (check {rng.getrandbits(16):04x}).')
        return "\n".join(lines)

    def _revise(self, prompt: str, rng: random.Random, nonce: str) -> str:
        block = _between(prompt, "The original project proposal (containing multiple ideas) is\n\n", "\n\nHowever, the following")
        try:
            current = extract_json_object(block or "")
        except UnparseableReply:
            return "I could not find the proposal."
        out: dict[str, str] = {}
        for i, (name, value) in enumerate(current.items()):
            ref = hashlib.sha256(f"{nonce}:{i}".encode()).hexdigest()[:10]
            body = split_sections(value if isinstance(value, str) else json.dumps(value))
            sections = dict(body.sections)
            if not body.structured:
                sections = {s: sections[Section.PROPOSED_METHOD] for s in SECTION_ORDER}
            sections[Section.PROPOSED_METHOD] = REF_RE.sub("", sections[Section.PROPOSED_METHOD]).strip() + f" Revised per review. [ref:{ref}]"
            sections[Section.EXPERIMENT_PLAN] += f" Adds a worked test case (variant {rng.getrandbits(16):04x})."
            out[name] = IdeaBody(sections).text()
        return json.dumps(out, indent=2)

    def _expand(self, prompt: str, rng: random.Random, nonce: str) -> str:
        name = _between(prompt, 'The idea is named "', '"') or "Idea"
        return "\n\n".join(
            [f"Title: {name}"]
            + [
                f"({i}) {title}: Expanded detail for {name.lower()} ({rng.getrandbits(20):05x})."
                for i, title in enumerate(["Problem", "Existing Methods", "Motivation", "Proposed Method", "Experiment Plan"], 1)
            ]
            + [f"[ref:{nonce}]"]
        )

    def _judge(self, prompt: str, rng: random.Random) -> str:
        if self.judge is not None:
            from ideadialog.tournament import split_judge_prompt

            a, b = split_judge_prompt(prompt)
            return f"Having compared both proposals:\n{self.judge(a, b)}"
        return f"Both are reasonable, but one is stronger.\n{rng.choice('AB')}"

    # embeddings -----------------------------------------------------------

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        """Unit vectors from (seed, text).

        Texts naming the same "<adjective> <noun> Prompting" concept share a
        dominant direction (pairwise cosine ~0.92), so mock pools contain
        genuine near-duplicates; all other texts are close to orthogonal.
        """
        out = []
        for text in texts:
            v = self._unit(_digest(self.seed, "embed", text))
            m = _CONCEPT_RE.search(text)
            if m:
                v = self._unit(_digest(self.seed, "concept", m.group(1), m.group(2))) + 0.3 * v
            out.append((v / np.linalg.norm(v)).tolist())
        return out

    def _unit(self, digest: bytes) -> np.ndarray:
        v = np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(self.embedding_dim)
        return v / np.linalg.norm(v)
