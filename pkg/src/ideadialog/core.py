"""Shared data types for the ideation pipeline.

Everything here is pure data: construction, validation and (de)serialization
to plain dicts. No module in this file performs I/O.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from functools import cache
from importlib import resources
from typing import Any, Iterable, Mapping


class Persona(str, enum.Enum):
    AI_RESEARCHER = "AIResearcher"
    PHYSICS_AI = "PhysicsAI"
    CHEMISTRY_AI = "ChemistryAI"
    BIOLOGY_AI = "BiologyAI"
    FINANCE_AI = "FinanceAI"
    PSYCHOLOGY_AI = "PsychologyAI"

    @property
    def prompt_text(self) -> str:
        return _persona_text(self.value)

    @property
    def is_domain_expert(self) -> bool:
        return self is not Persona.AI_RESEARCHER


_PERSONA_FILES = {
    "AIResearcher": "ai_researcher.txt",
    "PhysicsAI": "physics_ai.txt",
    "ChemistryAI": "chemistry_ai.txt",
    "BiologyAI": "biology_ai.txt",
    "FinanceAI": "finance_ai.txt",
    "PsychologyAI": "psychology_ai.txt",
}

# Rotation order for per-trial persona choice (seed mod 5).
DOMAIN_PERSONAS = (
    Persona.PHYSICS_AI,
    Persona.CHEMISTRY_AI,
    Persona.BIOLOGY_AI,
    Persona.FINANCE_AI,
    Persona.PSYCHOLOGY_AI,
)


@cache
def _persona_text(name: str) -> str:
    path = resources.files("ideadialog.assets").joinpath("personas", _PERSONA_FILES[name])
    return path.read_text(encoding="utf-8")


class Variant(str, enum.Enum):
    SINGLE = "Single"
    BASELINE = "Baseline"
    ITERATIVE = "IterativeSelfCritique"
    PARALLEL = "ParallelSelfCritique"
    DIVERSE_CRITIC = "DiverseCritic"
    DIVERSE_PROPOSER = "DiverseProposerReviser"


class Role(str, enum.Enum):
    IDEATION = "Ideation"
    CRITIQUE = "Critique"
    REVISION = "Revision"


class Section(str, enum.Enum):
    PROBLEM = "Problem"
    EXISTING_METHODS = "ExistingMethods"
    MOTIVATION = "Motivation"
    PROPOSED_METHOD = "ProposedMethod"
    EXPERIMENT_PLAN = "ExperimentPlan"


SECTION_ORDER = tuple(Section)

SECTION_TITLES = {
    Section.PROBLEM: "Problem",
    Section.EXISTING_METHODS: "Existing Methods",
    Section.MOTIVATION: "Motivation",
    Section.PROPOSED_METHOD: "Proposed Method",
    Section.EXPERIMENT_PLAN: "Experiment Plan",
}


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""


@dataclass(frozen=True)
class Topic:
    id: str
    description: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("topic id must be nonempty")
        if not self.description:
            raise ValidationError(f"topic {self.id!r} has an empty description")


DEFAULT_TOPICS = (
    Topic("bias", "novel prompting methods to reduce social biases and stereotypes of large language models"),
    Topic("coding", "novel prompting methods for large language models to improve code generation"),
    Topic(
        "safety",
        "novel prompting methods to improve large language models' robustness against adversarial "
        "attacks or improve their security or privacy",
    ),
    Topic(
        "multilinguality",
        "novel prompting methods to improve large language models' performance on multilingual tasks "
        "or low-resource languages and vernacular languages",
    ),
    Topic("factuality", "novel prompting methods that can improve factuality and reduce hallucination of large language models"),
    Topic("math", "novel prompting methods for large language models to improve mathematical problem solving"),
    Topic(
        "uncertainty",
        "novel prompting methods that can better quantify uncertainty or calibrate the confidence of large language models",
    ),
)


@dataclass(frozen=True)
class PaperRecord:
    paper_id: str
    title: str
    abstract: str
    fetched_at: str  # ISO-8601

    def __post_init__(self) -> None:
        if not self.paper_id:
            raise ValidationError("paper_id must be nonempty")
        if not self.title:
            raise ValidationError(f"paper {self.paper_id!r} has an empty title")

    def to_dict(self) -> dict[str, Any]:
        return {"paper_id": self.paper_id, "title": self.title, "abstract": self.abstract, "fetched_at": self.fetched_at}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PaperRecord:
        return cls(str(d["paper_id"]), d["title"], d.get("abstract") or "", d.get("fetched_at") or "")


def utc_timestamp(now: datetime) -> str:
    return now.isoformat(timespec="seconds")


@dataclass(frozen=True)
class DialogueConfig:
    """One point of the design space.

    ``rotate_persona`` marks the diverse variants whose domain persona is not
    fixed but picked per trial; see :meth:`for_seed`.
    """

    variant: Variant
    depth_L: int = 1
    parallel_N: int = 1
    proposer_persona: Persona = Persona.AI_RESEARCHER
    critic_personas: tuple[Persona, ...] = (Persona.AI_RESEARCHER,)
    ideas_per_trial_k: int = 5
    papers_per_trial_n: int = 10
    rotate_persona: bool = False

    @property
    def config_id(self) -> str:
        v = self.variant
        if v is Variant.SINGLE:
            return "single"
        if v is Variant.BASELINE:
            return "baseline"
        if v is Variant.ITERATIVE:
            return f"iterative-L{self.depth_L}"
        if v is Variant.PARALLEL:
            return f"parallel-N{self.parallel_N}"
        base = "diverse-critic" if v is Variant.DIVERSE_CRITIC else "diverse-proposer"
        if self.rotate_persona:
            return base
        persona = self.proposer_persona if v is Variant.DIVERSE_PROPOSER else _first_expert(self.critic_personas)
        return f"{base}-{persona.value}" if persona else base

    @property
    def chat_calls(self) -> int:
        """Number of chat calls one trial issues."""
        if self.variant is Variant.SINGLE:
            return 1
        return 1 + self.depth_L * (self.parallel_N + 1)

    def for_seed(self, seed: int) -> DialogueConfig:
        """Concrete configuration for one trial (resolves persona rotation)."""
        if not self.rotate_persona:
            return self
        persona = DOMAIN_PERSONAS[seed % len(DOMAIN_PERSONAS)]
        if self.variant is Variant.DIVERSE_CRITIC:
            return replace(self, critic_personas=(persona,) * self.parallel_N, rotate_persona=False)
        if self.variant is Variant.DIVERSE_PROPOSER:
            return replace(self, proposer_persona=persona, rotate_persona=False)
        return replace(self, rotate_persona=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "depth_L": self.depth_L,
            "parallel_N": self.parallel_N,
            "proposer_persona": self.proposer_persona.value,
            "critic_personas": [p.value for p in self.critic_personas],
            "ideas_per_trial_k": self.ideas_per_trial_k,
            "papers_per_trial_n": self.papers_per_trial_n,
            "rotate_persona": self.rotate_persona,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DialogueConfig:
        variant = Variant(d["variant"])
        defaults = default_config(variant)
        return cls(
            variant=variant,
            depth_L=int(d.get("depth_L", defaults.depth_L)),
            parallel_N=int(d.get("parallel_N", defaults.parallel_N)),
            proposer_persona=Persona(d.get("proposer_persona", defaults.proposer_persona.value)),
            critic_personas=tuple(Persona(p) for p in d.get("critic_personas", [p.value for p in defaults.critic_personas])),
            ideas_per_trial_k=int(d.get("ideas_per_trial_k", defaults.ideas_per_trial_k)),
            papers_per_trial_n=int(d.get("papers_per_trial_n", defaults.papers_per_trial_n)),
            rotate_persona=bool(d.get("rotate_persona", defaults.rotate_persona)),
        )


def _first_expert(personas: Iterable[Persona]) -> Persona | None:
    return next((p for p in personas if p.is_domain_expert), None)


def default_config(variant: Variant) -> DialogueConfig:
    """Smallest valid configuration of ``variant``."""
    if variant is Variant.SINGLE:
        return DialogueConfig(variant, depth_L=0, parallel_N=0, critic_personas=())
    if variant is Variant.DIVERSE_CRITIC:
        return DialogueConfig(variant, critic_personas=(Persona.PHYSICS_AI,), rotate_persona=True)
    if variant is Variant.DIVERSE_PROPOSER:
        return DialogueConfig(variant, proposer_persona=Persona.PHYSICS_AI, rotate_persona=True)
    if variant is Variant.ITERATIVE:
        return DialogueConfig(variant, depth_L=2)
    if variant is Variant.PARALLEL:
        return DialogueConfig(variant, parallel_N=2, critic_personas=(Persona.AI_RESEARCHER,) * 2)
    return DialogueConfig(variant)


def default_configs() -> list[DialogueConfig]:
    """The ten configurations of the study, in table order."""
    ai = Persona.AI_RESEARCHER
    return [
        default_config(Variant.SINGLE),
        default_config(Variant.BASELINE),
        *(DialogueConfig(Variant.ITERATIVE, depth_L=L) for L in (2, 3, 4)),
        *(DialogueConfig(Variant.PARALLEL, parallel_N=N, critic_personas=(ai,) * N) for N in (2, 3, 4)),
        default_config(Variant.DIVERSE_CRITIC),
        default_config(Variant.DIVERSE_PROPOSER),
    ]


def validate_config(cfg: DialogueConfig) -> list[str]:
    """Return a description of every invariant ``cfg`` violates (empty if valid)."""
    problems: list[str] = []
    v = cfg.variant
    ai = Persona.AI_RESEARCHER
    if cfg.ideas_per_trial_k < 1:
        problems.append("ideas_per_trial_k must be a positive integer")
    if cfg.papers_per_trial_n < 1:
        problems.append("papers_per_trial_n must be a positive integer")

    if v is Variant.SINGLE:
        if cfg.depth_L != 0:
            problems.append("Single requires depth_L = 0")
        if cfg.parallel_N != 0:
            problems.append("Single requires parallel_N = 0")
        if cfg.critic_personas:
            problems.append("Single takes no critic personas")
        if cfg.proposer_persona is not ai:
            problems.append("Single uses the AIResearcher persona")
        return problems

    if cfg.depth_L < 1:
        problems.append("depth_L must be a positive integer")
    if cfg.parallel_N < 1:
        problems.append("parallel_N must be a positive integer")
    if len(cfg.critic_personas) != cfg.parallel_N:
        problems.append(f"persona list length ≠ N ({len(cfg.critic_personas)} critic personas, parallel_N = {cfg.parallel_N})")

    all_ai = cfg.proposer_persona is ai and all(p is ai for p in cfg.critic_personas)
    if v is Variant.BASELINE:
        if cfg.depth_L != 1:
            problems.append("Baseline requires depth_L = 1")
        if cfg.parallel_N != 1:
            problems.append("Baseline requires parallel_N = 1")
        if not all_ai:
            problems.append("Baseline requires every persona to be AIResearcher")
    elif v is Variant.ITERATIVE:
        if cfg.depth_L not in (2, 3, 4):
            problems.append("IterativeSelfCritique requires depth_L in {2, 3, 4}")
        if cfg.parallel_N != 1:
            problems.append("IterativeSelfCritique requires parallel_N = 1")
        if not all_ai:
            problems.append("IterativeSelfCritique requires every persona to be AIResearcher")
    elif v is Variant.PARALLEL:
        if cfg.parallel_N not in (2, 3, 4):
            problems.append("ParallelSelfCritique requires parallel_N in {2, 3, 4}")
        if cfg.depth_L != 1:
            problems.append("ParallelSelfCritique requires depth_L = 1")
        if not all_ai:
            problems.append("ParallelSelfCritique requires every persona to be AIResearcher")
    elif v is Variant.DIVERSE_CRITIC:
        if not any(p.is_domain_expert for p in cfg.critic_personas):
            problems.append("DiverseCritic requires a non-AIResearcher critic persona")
        if cfg.proposer_persona is not ai:
            problems.append("DiverseCritic requires the AIResearcher proposer persona")
    elif v is Variant.DIVERSE_PROPOSER:
        if cfg.proposer_persona is ai:
            problems.append("DiverseProposerReviser requires a non-AIResearcher proposer persona")
        if any(p is not ai for p in cfg.critic_personas):
            problems.append("DiverseProposerReviser requires every critic persona to be AIResearcher")
    return problems


@dataclass(frozen=True)
class IdeaOrigin:
    topic: str
    config: str
    seed: int
    index: int

    def sort_key(self) -> tuple[str, str, int, int]:
        return (self.topic, self.config, self.seed, self.index)


@dataclass(frozen=True)
class IdeaRecord:
    """One named idea with its five-part body.

    ``structured`` is False when the model's text carried no section headers;
    the whole text then sits under ProposedMethod and the other sections are
    empty.
    """

    idea_name: str
    body: Mapping[Section, str]
    origin: IdeaOrigin
    embedding: tuple[float, ...] | None = None
    survived_dedup: bool | None = None
    structured: bool = True

    def __post_init__(self) -> None:
        if not self.idea_name:
            raise ValidationError("idea_name must be nonempty")
        missing = [s.value for s in SECTION_ORDER if s not in self.body]
        if missing:
            raise ValidationError(f"idea {self.idea_name!r} lacks sections {missing}")
        if self.structured:
            empty = [s.value for s in SECTION_ORDER if s is not Section.EXISTING_METHODS and not self.body[s]]
            if empty:
                raise ValidationError(f"idea {self.idea_name!r} has empty sections {empty}")
        if self.embedding is not None:
            norm = math.sqrt(math.fsum(x * x for x in self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValidationError(f"embedding of {self.idea_name!r} has norm {norm}, expected 1")

    @property
    def idea_id(self) -> str:
        o = self.origin
        return f"{o.topic}/{o.config}/s{o.seed:02d}/i{o.index}"

    def to_dict(self) -> dict[str, Any]:
        o = self.origin
        return {
            "idea_id": self.idea_id,
            "idea_name": self.idea_name,
            "body": {s.value: self.body[s] for s in SECTION_ORDER},
            "origin": {"topic": o.topic, "config": o.config, "seed": o.seed, "index": o.index},
            "structured": self.structured,
            "survived_dedup": self.survived_dedup,
            "embedding": list(self.embedding) if self.embedding is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> IdeaRecord:
        o = d["origin"]
        emb = d.get("embedding")
        return cls(
            idea_name=d["idea_name"],
            body={Section(k): v for k, v in d["body"].items()},
            origin=IdeaOrigin(o["topic"], o["config"], int(o["seed"]), int(o["index"])),
            embedding=tuple(emb) if emb is not None else None,
            survived_dedup=d.get("survived_dedup"),
            structured=d.get("structured", True),
        )


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class AgentStep:
    role: Role
    persona: Persona
    system_prompt: str
    rendered_prompt: str
    raw_response: str
    parsed_payload: Any
    token_usage: TokenUsage
    wall_time_ms: int
    # Replies thrown away by a corrective re-ask; they are not separate steps.
    rejected_replies: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "persona": self.persona.value,
            "system_prompt": self.system_prompt,
            "rendered_prompt": self.rendered_prompt,
            "raw_response": self.raw_response,
            "parsed_payload": self.parsed_payload,
            "token_usage": {
                "prompt_tokens": self.token_usage.prompt_tokens,
                "completion_tokens": self.token_usage.completion_tokens,
            },
            "wall_time_ms": self.wall_time_ms,
            "rejected_replies": list(self.rejected_replies),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AgentStep:
        return cls(
            role=Role(d["role"]),
            persona=Persona(d["persona"]),
            system_prompt=d["system_prompt"],
            rendered_prompt=d["rendered_prompt"],
            raw_response=d["raw_response"],
            parsed_payload=d["parsed_payload"],
            token_usage=TokenUsage(**d["token_usage"]),
            wall_time_ms=int(d["wall_time_ms"]),
            rejected_replies=tuple(d.get("rejected_replies", ())),
        )


@dataclass(frozen=True)
class Transcript:
    config: DialogueConfig
    topic: Topic
    seed: int
    steps: tuple[AgentStep, ...]
    final_ideas: tuple[IdeaRecord, ...]
    paper_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_id": self.config.config_id,
            "config": self.config.to_dict(),
            "topic": {"id": self.topic.id, "description": self.topic.description},
            "seed": self.seed,
            "paper_ids": list(self.paper_ids),
            "steps": [s.to_dict() for s in self.steps],
            "final_ideas": [i.to_dict() for i in self.final_ideas],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Transcript:
        return cls(
            config=DialogueConfig.from_dict(d["config"]),
            topic=Topic(**d["topic"]),
            seed=int(d["seed"]),
            steps=tuple(AgentStep.from_dict(s) for s in d["steps"]),
            final_ideas=tuple(IdeaRecord.from_dict(i) for i in d["final_ideas"]),
            paper_ids=tuple(d.get("paper_ids", ())),
        )


class Verdict(str, enum.Enum):
    A = "A"
    B = "B"


class Source(str, enum.Enum):
    BASELINE = "Baseline"
    CANDIDATE = "Candidate"


@dataclass(frozen=True)
class MatchRecord:
    round: int
    proposal_a_id: str
    proposal_b_id: str
    judge_verdict: Verdict
    presentation_order_swapped: bool
    # True when the two presentations disagreed and a coin flip decided.
    split_decision: bool = False

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValidationError("round must be >= 1")
        if self.proposal_a_id == self.proposal_b_id:
            raise ValidationError("a proposal cannot play itself")

    @property
    def winner_id(self) -> str:
        return self.proposal_a_id if self.judge_verdict is Verdict.A else self.proposal_b_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "proposal_a_id": self.proposal_a_id,
            "proposal_b_id": self.proposal_b_id,
            "judge_verdict": self.judge_verdict.value,
            "presentation_order_swapped": self.presentation_order_swapped,
            "split_decision": self.split_decision,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MatchRecord:
        return cls(
            round=int(d["round"]),
            proposal_a_id=d["proposal_a_id"],
            proposal_b_id=d["proposal_b_id"],
            judge_verdict=Verdict(d["judge_verdict"]),
            presentation_order_swapped=bool(d["presentation_order_swapped"]),
            split_decision=bool(d.get("split_decision", False)),
        )


@dataclass(frozen=True)
class RankedProposal:
    proposal_id: str
    source: Source
    score: int
    rank: int

    def to_dict(self) -> dict[str, Any]:
        return {"proposal_id": self.proposal_id, "source": self.source.value, "score": self.score, "rank": self.rank}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RankedProposal:
        return cls(d["proposal_id"], Source(d["source"]), int(d["score"]), int(d["rank"]))


@dataclass(frozen=True)
class Decoding:
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValidationError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "top_p": self.top_p, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class ProviderSettings:
    mock: bool = False
    mock_seed: int = 0
    mock_embedding_dim: int = 384
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    embedding_base_url: str | None = None
    embedding_api_key_env: str | None = None
    max_attempts: int = 6
    timeout_s: float = 120.0


@dataclass(frozen=True)
class RunManifest:
    """The whole experiment grid plus every setting that shapes its outputs."""

    topics: tuple[Topic, ...] = DEFAULT_TOPICS
    configs: tuple[DialogueConfig, ...] = field(default_factory=lambda: tuple(default_configs()))
    seeds_per_cell: int = 20
    decoding: Decoding = Decoding()
    judge_decoding: Decoding = Decoding(temperature=0.0, max_tokens=512)
    generation_model: str = "gpt-4o-mini"
    judge_model: str = "gpt-4"
    embedding_model: str = "all-MiniLM-L6-v2"
    provider: ProviderSettings = ProviderSettings()
    bank_size: int = 120
    corpus_dir: str | None = None
    semantic_scholar_key_env: str = "S2_API_KEY"
    dedup_threshold: float = 0.8
    tournament_rounds: int = 10
    order_swap: bool = True
    tournament_seed: int = 0
    cumulative_existing_ideas: bool = True
    max_existing_ideas: int = 100
    method: str = "prompting"
    examples: str | None = None
    cell_attempts: int = 3

    @property
    def seeds(self) -> range:
        return range(self.seeds_per_cell)

    @property
    def target_total_ideas_R(self) -> int:
        return sum(len(self.topics) * self.seeds_per_cell * c.ideas_per_trial_k for c in self.configs)

    def problems(self) -> list[str]:
        out: list[str] = []
        ids = [t.id for t in self.topics]
        if len(set(ids)) != len(ids):
            out.append("topic ids must be unique")
        cids = [c.config_id for c in self.configs]
        if len(set(cids)) != len(cids):
            out.append("config ids must be unique")
        for c in self.configs:
            out.extend(f"{c.config_id}: {p}" for p in validate_config(c))
        if self.seeds_per_cell < 1:
            out.append("seeds_per_cell must be positive")
        if not 0 < self.dedup_threshold < 1:
            out.append("dedup_threshold must lie in (0, 1)")
        if self.tournament_rounds < 1:
            out.append("tournament_rounds must be >= 1")
        return out
