"""Turns surviving ideas into the long-form proposals the tournament compares."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ideadialog.core import Decoding, IdeaRecord, Persona, Topic
from ideadialog.gateway import ChatRequest, Gateway, GatewayError
from ideadialog.prompts import IdeaBody, PromptKind, render


class ExpansionFailed(Exception):
    pass


class NotASurvivor(ValueError):
    """Expansion was asked for an idea the dedup filter dropped (or never saw)."""


@dataclass(frozen=True)
class Proposal:
    proposal_id: str
    idea_id: str
    idea_name: str
    expanded_text: str
    model: str
    decoding: Decoding

    def to_dict(self) -> dict[str, Any]:
        return {
            "proposal_id": self.proposal_id,
            "idea_id": self.idea_id,
            "idea_name": self.idea_name,
            "expanded_text": self.expanded_text,
            "model": self.model,
            "decoding": self.decoding.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Proposal:
        return cls(d["proposal_id"], d["idea_id"], d["idea_name"], d["expanded_text"], d["model"], Decoding(**d["decoding"]))


def expansion_prompt(idea: IdeaRecord, topic: Topic) -> str:
    body = IdeaBody(idea.body, idea.structured)
    return render(
        PromptKind.EXPANSION,
        {
            "persona_prompts": Persona.AI_RESEARCHER.prompt_text,
            "topic_description": topic.description,
            "idea_name": idea.idea_name,
            "idea_text": body.text(),
        },
    )


def expand(idea: IdeaRecord, topic: Topic, gateway: Gateway, decoding: Decoding = Decoding(), model: str = "gpt-4o-mini") -> Proposal:
    if idea.survived_dedup is not True:
        raise NotASurvivor(f"{idea.idea_id} did not survive deduplication")
    req = ChatRequest(Persona.AI_RESEARCHER.prompt_text, expansion_prompt(idea, topic), decoding, model)
    try:
        resp = gateway.complete(req)
    except GatewayError as exc:
        raise ExpansionFailed(f"{idea.idea_id}: {exc}") from exc
    if not resp.text.strip():
        raise ExpansionFailed(f"{idea.idea_id}: empty expansion")
    return Proposal(idea.idea_id, idea.idea_id, idea.idea_name, resp.text, model, decoding)


def expand_pool(
    ideas: Sequence[IdeaRecord],
    topic: Topic,
    gateway: Gateway,
    decoding: Decoding = Decoding(),
    model: str = "gpt-4o-mini",
    cached: Mapping[str, Proposal] | None = None,
    max_workers: int = 8,
) -> list[Proposal]:
    """Expand every survivor in ``ideas``; proposals already in ``cached`` cost no call."""
    cached = cached or {}
    survivors = [i for i in ideas if i.survived_dedup]
    todo = [i for i in survivors if i.idea_id not in cached]
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        fresh = dict(zip((i.idea_id for i in todo), pool.map(lambda i: expand(i, topic, gateway, decoding, model), todo)))
    return [cached.get(i.idea_id) or fresh[i.idea_id] for i in survivors]
