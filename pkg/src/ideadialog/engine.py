"""Runs one trial of a dialogue configuration.

A trial is ideation, then ``depth_L`` rounds of (``parallel_N`` critiques of
the same idea snapshot, one revision fed their aggregate). Single stops after
ideation. The number of chat calls is therefore 1 for Single and
``1 + L * (N + 1)`` otherwise.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from ideadialog.core import (
    AgentStep,
    DialogueConfig,
    Decoding,
    IdeaOrigin,
    IdeaRecord,
    Persona,
    Role,
    TokenUsage,
    Topic,
    Transcript,
    Variant,
    validate_config,
)
from ideadialog.gateway import ChatRequest, Gateway
from ideadialog.papers import PaperBank, format_papers, sample_papers
from ideadialog.prompts import (
    CritiquePayload,
    IdeaBody,
    ParseError,
    PromptKind,
    aggregate_critiques,
    default_examples,
    ideas_to_json,
    parse_critique,
    parse_ideas,
    reask_suffix,
    render,
)

logger = logging.getLogger(__name__)


class TrialFailed(Exception):
    def __init__(self, message: str, partial: Transcript, cause: BaseException | None = None):
        super().__init__(message)
        self.partial = partial
        self.cause = cause


class IllegalTransition(RuntimeError):
    pass


class Phase(str, enum.Enum):
    INIT = "Init"
    IDEATED = "Ideated"
    CRITIQUED = "Critiqued"
    REVISED = "Revised"
    DONE = "Done"


_LEGAL = {
    Phase.INIT: {Phase.IDEATED},
    Phase.IDEATED: {Phase.CRITIQUED, Phase.DONE},
    Phase.CRITIQUED: {Phase.REVISED},
    Phase.REVISED: {Phase.CRITIQUED, Phase.DONE},
    Phase.DONE: set(),
}


@dataclass
class EngineState:
    phase: Phase = Phase.INIT
    round: int = 0
    current_ideas: dict[str, IdeaBody] = field(default_factory=dict)

    def advance(self, to: Phase, ideas: dict[str, IdeaBody] | None = None) -> None:
        if to not in _LEGAL[self.phase]:
            raise IllegalTransition(f"{self.phase.value} -> {to.value}")
        self.phase = to
        if to is Phase.REVISED:
            self.round += 1
        if ideas is not None:
            self.current_ideas = ideas


@dataclass(frozen=True)
class TrialSettings:
    decoding: Decoding = Decoding()
    model: str = "gpt-4o-mini"
    method: str = "prompting"
    examples: str | None = None
    existing_ideas: Sequence[str] = ()


def route_personas(cfg: DialogueConfig) -> tuple[Persona, list[Persona]]:
    """(proposer/reviser persona, critic personas) for a concrete config."""
    ai = Persona.AI_RESEARCHER
    if cfg.variant is Variant.DIVERSE_CRITIC:
        return ai, list(cfg.critic_personas)
    if cfg.variant is Variant.DIVERSE_PROPOSER:
        return cfg.proposer_persona, [ai] * cfg.parallel_N
    return ai, [ai] * cfg.parallel_N


def _ideas_payload(ideas: dict[str, IdeaBody]) -> dict[str, Any]:
    return {name: body.to_payload() for name, body in ideas.items()}


class _Trial:
    def __init__(self, cfg: DialogueConfig, topic: Topic, seed: int, gateway: Gateway, settings: TrialSettings):
        self.cfg = cfg
        self.topic = topic
        self.seed = seed
        self.gateway = gateway
        self.settings = settings
        self.steps: list[AgentStep] = []
        self.paper_ids: tuple[str, ...] = ()

    def call(
        self,
        role: Role,
        persona: Persona,
        prompt: str,
        parse: Callable[[str], Any],
        reask: Callable[[ParseError], str],
    ) -> tuple[AgentStep, Any]:
        """One agent call, with a single corrective re-ask if the reply won't parse."""
        req = ChatRequest(persona.prompt_text, prompt, self.settings.decoding, self.settings.model)
        resp = self.gateway.complete(req)
        rejected: tuple[str, ...] = ()
        usage = resp.token_usage
        wall = resp.latency_ms
        try:
            parsed = parse(resp.text)
        except ParseError as err:
            logger.info("re-asking %s step (%s)", role.value, err)
            rejected = (resp.text,)
            prompt = prompt + reask(err)
            resp = self.gateway.complete(ChatRequest(persona.prompt_text, prompt, self.settings.decoding, self.settings.model))
            usage = TokenUsage(usage.prompt_tokens + resp.token_usage.prompt_tokens, usage.completion_tokens + resp.token_usage.completion_tokens)
            wall += resp.latency_ms
            parsed = parse(resp.text)
        payload = parsed.to_payload() if isinstance(parsed, CritiquePayload) else _ideas_payload(parsed)
        step = AgentStep(role, persona, persona.prompt_text, prompt, resp.text, payload, usage, wall, rejected)
        return step, parsed

    def transcript(self, final: Sequence[IdeaRecord] = ()) -> Transcript:
        return Transcript(self.cfg, self.topic, self.seed, tuple(self.steps), tuple(final), self.paper_ids)


def run_trial(
    cfg: DialogueConfig,
    topic: Topic,
    seed: int,
    gateway: Gateway,
    bank: PaperBank,
    settings: TrialSettings = TrialSettings(),
) -> Transcript:
    problems = validate_config(cfg)
    if problems:
        raise ValueError(f"invalid config {cfg.config_id}: {'; '.join(problems)}")
    concrete = cfg.for_seed(seed)
    proposer, critics = route_personas(concrete)
    papers = sample_papers(bank, cfg.papers_per_trial_n, seed)
    trial = _Trial(cfg, topic, seed, gateway, settings)
    trial.paper_ids = tuple(p.paper_id for p in papers)
    state = EngineState()
    k = cfg.ideas_per_trial_k

    try:
        prompt = render(
            PromptKind.IDEATION,
            {
                "persona_prompts": proposer.prompt_text,
                "topic_description": topic.description,
                "formatted_papers": format_papers(papers),
                "ideas_n": k,
                "examples": settings.examples if settings.examples is not None else default_examples(),
                "method": settings.method,
                "existing_ideas": "\n".join(settings.existing_ideas),
            },
        )
        step, ideas = trial.call(Role.IDEATION, proposer, prompt, lambda r: parse_ideas(r, k), lambda e: reask_suffix(e, k))
        trial.steps.append(step)
        state.advance(Phase.IDEATED, ideas)

        for _ in range(cfg.depth_L if cfg.variant is not Variant.SINGLE else 0):
            snapshot = ideas_to_json(state.current_ideas)

            def critique(persona: Persona) -> tuple[AgentStep, CritiquePayload]:
                p = render(
                    PromptKind.CRITIQUE,
                    {"persona_prompts": persona.prompt_text, "topic_description": topic.description, "current_ideas_json_str": snapshot},
                )
                return trial.call(Role.CRITIQUE, persona, p, parse_critique, lambda e: "\n\nYour previous reply was empty. Please list your criticisms.")

            if len(critics) == 1:
                results = [critique(critics[0])]
            else:
                # results stay in critic-index order regardless of completion order
                with ThreadPoolExecutor(max_workers=len(critics)) as pool:
                    results = list(pool.map(critique, critics))
            trial.steps.extend(step for step, _ in results)
            state.advance(Phase.CRITIQUED)

            expected = len(state.current_ideas)
            revise_prompt = render(
                PromptKind.REVISE,
                {
                    "persona_prompts": proposer.prompt_text,
                    "topic_description": topic.description,
                    "current_ideas_json_str": snapshot,
                    "response_critic": aggregate_critiques([c for _, c in results], critics),
                },
            )
            step, revised = trial.call(
                Role.REVISION, proposer, revise_prompt, lambda r: parse_ideas(r, expected), lambda e: reask_suffix(e, expected)
            )
            trial.steps.append(step)
            state.advance(Phase.REVISED, revised)
        state.advance(Phase.DONE)
    except TrialFailed:
        raise
    except Exception as exc:
        raise TrialFailed(f"{cfg.config_id}/{topic.id}/seed {seed}: {type(exc).__name__}: {exc}", trial.transcript(), exc) from exc

    final = [
        IdeaRecord(name, dict(body.sections), IdeaOrigin(topic.id, cfg.config_id, seed, i), structured=body.structured)
        for i, (name, body) in enumerate(state.current_ideas.items())
    ]
    return trial.transcript(final)
