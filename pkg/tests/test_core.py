import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ideadialog.core import (
    DOMAIN_PERSONAS,
    DialogueConfig,
    IdeaOrigin,
    IdeaRecord,
    Persona,
    RunManifest,
    Section,
    ValidationError,
    Variant,
    default_configs,
    validate_config,
)

AI = Persona.AI_RESEARCHER


def satisfies_table(cfg):
    """Independent restatement of the per-variant rules."""
    ai_everywhere = cfg.proposer_persona is AI and all(p is AI for p in cfg.critic_personas)
    if cfg.ideas_per_trial_k < 1 or cfg.papers_per_trial_n < 1:
        return False
    if cfg.variant is Variant.SINGLE:
        return cfg.depth_L == 0 and cfg.parallel_N == 0 and not cfg.critic_personas and cfg.proposer_persona is AI
    if cfg.depth_L < 1 or cfg.parallel_N < 1 or len(cfg.critic_personas) != cfg.parallel_N:
        return False
    return {
        Variant.BASELINE: cfg.depth_L == 1 and cfg.parallel_N == 1 and ai_everywhere,
        Variant.ITERATIVE: cfg.depth_L in (2, 3, 4) and cfg.parallel_N == 1 and ai_everywhere,
        Variant.PARALLEL: cfg.parallel_N in (2, 3, 4) and cfg.depth_L == 1 and ai_everywhere,
        Variant.DIVERSE_CRITIC: any(p is not AI for p in cfg.critic_personas) and cfg.proposer_persona is AI,
        Variant.DIVERSE_PROPOSER: cfg.proposer_persona is not AI and all(p is AI for p in cfg.critic_personas),
    }[cfg.variant]


configs = st.builds(
    DialogueConfig,
    variant=st.sampled_from(Variant),
    depth_L=st.integers(-1, 5),
    parallel_N=st.integers(-1, 5),
    proposer_persona=st.sampled_from(Persona),
    critic_personas=st.lists(st.sampled_from(Persona), max_size=5).map(tuple),
    ideas_per_trial_k=st.integers(0, 6),
    papers_per_trial_n=st.integers(0, 12),
)


def test_baseline_reference_config_is_valid():
    assert validate_config(DialogueConfig(Variant.BASELINE, 1, 1, AI, (AI,))) == []


def test_single_with_depth_two_names_the_depth_rule():
    problems = validate_config(DialogueConfig(Variant.SINGLE, depth_L=2, parallel_N=0, critic_personas=()))
    assert len(problems) == 1
    assert "depth_L" in problems[0]


def test_parallel_with_short_persona_list():
    cfg = DialogueConfig(Variant.PARALLEL, depth_L=1, parallel_N=3, critic_personas=(AI, AI))
    assert validate_config(cfg) == ["persona list length ≠ N (2 critic personas, parallel_N = 3)"]


@pytest.mark.parametrize(
    "cfg, fragment",
    [
        (DialogueConfig(Variant.SINGLE, depth_L=0, parallel_N=1, critic_personas=(AI,)), "parallel_N = 0"),
        (DialogueConfig(Variant.BASELINE, depth_L=2), "depth_L = 1"),
        (DialogueConfig(Variant.BASELINE, proposer_persona=Persona.FINANCE_AI), "AIResearcher"),
        (DialogueConfig(Variant.ITERATIVE, depth_L=5), "{2, 3, 4}"),
        (DialogueConfig(Variant.ITERATIVE, depth_L=2, parallel_N=2, critic_personas=(AI, AI)), "parallel_N = 1"),
        (DialogueConfig(Variant.PARALLEL, parallel_N=1), "{2, 3, 4}"),
        (DialogueConfig(Variant.PARALLEL, depth_L=2, parallel_N=2, critic_personas=(AI, AI)), "depth_L = 1"),
        (DialogueConfig(Variant.DIVERSE_CRITIC, critic_personas=(AI,)), "non-AIResearcher critic"),
        (DialogueConfig(Variant.DIVERSE_CRITIC, proposer_persona=Persona.BIOLOGY_AI, critic_personas=(Persona.BIOLOGY_AI,)), "proposer"),
        (DialogueConfig(Variant.DIVERSE_PROPOSER), "non-AIResearcher proposer"),
        (DialogueConfig(Variant.DIVERSE_PROPOSER, proposer_persona=Persona.BIOLOGY_AI, critic_personas=(Persona.CHEMISTRY_AI,)), "critic"),
        (DialogueConfig(Variant.BASELINE, ideas_per_trial_k=0), "ideas_per_trial_k"),
    ],
)
def test_hand_built_violators(cfg, fragment):
    problems = validate_config(cfg)
    assert problems and any(fragment in p for p in problems)
    assert not satisfies_table(cfg)


@settings(max_examples=500)
@given(configs)
def test_validate_config_agrees_with_table(cfg):
    assert (validate_config(cfg) == []) == satisfies_table(cfg)
    assert validate_config(cfg) == validate_config(cfg)


def test_default_configs_are_the_ten_study_points():
    cfgs = default_configs()
    assert [c.config_id for c in cfgs] == [
        "single", "baseline", "iterative-L2", "iterative-L3", "iterative-L4",
        "parallel-N2", "parallel-N3", "parallel-N4", "diverse-critic", "diverse-proposer",
    ]
    assert all(validate_config(c) == [] for c in cfgs)
    assert [c.chat_calls for c in cfgs] == [1, 3, 5, 7, 9, 4, 5, 6, 3, 3]


def test_persona_rotation_is_seed_mod_five():
    critic = next(c for c in default_configs() if c.variant is Variant.DIVERSE_CRITIC)
    for seed in range(12):
        concrete = critic.for_seed(seed)
        assert concrete.critic_personas == (DOMAIN_PERSONAS[seed % 5],)
        assert validate_config(concrete) == []


def test_persona_texts():
    assert AI.prompt_text == "You are an expert AI researcher."
    texts = {p.prompt_text for p in Persona}
    assert len(texts) == 6
    assert Persona.PHYSICS_AI.prompt_text.startswith("You are an expert in physics")


def test_manifest_target_is_seven_thousand():
    m = RunManifest()
    assert m.target_total_ideas_R == 7 * 10 * 20 * 5 == 7000
    assert m.problems() == []


def _idea(**kw):
    body = {s: f"{s.value} text" for s in Section}
    base = dict(idea_name="Idea", body=body, origin=IdeaOrigin("bias", "baseline", 3, 1))
    return IdeaRecord(**{**base, **kw})


def test_idea_invariants():
    _idea(body={**{s: "x" for s in Section}, Section.EXISTING_METHODS: ""})
    with pytest.raises(ValidationError):
        _idea(idea_name="")
    with pytest.raises(ValidationError):
        _idea(body={**{s: "x" for s in Section}, Section.MOTIVATION: ""})
    with pytest.raises(ValidationError):
        _idea(embedding=(1.0, 1.0))
    assert _idea(embedding=(0.6, 0.8)).idea_id == "bias/baseline/s03/i1"


@given(
    name=st.text(min_size=1),
    sections=st.lists(st.text(min_size=1), min_size=5, max_size=5),
    seed=st.integers(0, 99),
)
def test_idea_round_trips_through_json(name, sections, seed):
    idea = IdeaRecord(name, dict(zip(Section, sections)), IdeaOrigin("math", "single", seed, 0), survived_dedup=True)
    restored = IdeaRecord.from_dict(json.loads(json.dumps(idea.to_dict(), ensure_ascii=False)))
    assert restored == idea
    assert restored.idea_name.encode() == idea.idea_name.encode()
    for s in Section:
        assert restored.body[s].encode() == idea.body[s].encode()


def test_config_round_trip():
    for cfg in default_configs():
        assert DialogueConfig.from_dict(cfg.to_dict()) == cfg
    cfg = replace(default_configs()[1], ideas_per_trial_k=3)
    assert DialogueConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
