import json
import re
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from ideadialog.core import Persona, Section
from ideadialog.gateway import ChatRequest
from ideadialog.core import Decoding
from ideadialog.mock import MockProvider
from ideadialog.prompts import (
    CritiqueCategory,
    CritiquePayload,
    DuplicateIdeaName,
    IdeaBody,
    MissingSlot,
    PromptKind,
    UnparseableReply,
    WrongCardinality,
    aggregate_critiques,
    default_examples,
    ideas_to_json,
    parse_critique,
    parse_ideas,
    render,
    split_sections,
)

GOLDEN = Path(__file__).parent / "golden"
SLOT = re.compile(r"\{([a-z_]+)\}")
KINDS = {PromptKind.IDEATION: "ideation", PromptKind.CRITIQUE: "critique", PromptKind.REVISE: "revise"}
PERSONA_FILES = {
    Persona.AI_RESEARCHER: "ai_researcher.txt", Persona.PHYSICS_AI: "physics_ai.txt",
    Persona.CHEMISTRY_AI: "chemistry_ai.txt", Persona.BIOLOGY_AI: "biology_ai.txt",
    Persona.FINANCE_AI: "finance_ai.txt", Persona.PSYCHOLOGY_AI: "psychology_ai.txt",
}


def golden(kind):
    return (GOLDEN / "templates" / f"{KINDS[kind]}.txt").read_text(encoding="utf-8")


def sentinel_slots(kind):
    return {name: f"\x00{name.upper()}\x00" for name in set(SLOT.findall(golden(kind)))}


def idea_text(tag=""):
    return IdeaBody({s: f"{s.value} of idea{tag}." for s in Section}).text()


def five_ideas(fenced=False):
    raw = json.dumps({f"Idea {i}": idea_text(i) for i in range(5)}, indent=2)
    return f"```json\n{raw}\n```" if fenced else raw


# rendering -----------------------------------------------------------------


@pytest.mark.parametrize("kind", list(KINDS))
def test_golden_fidelity_outside_slot_spans(kind):
    slots = sentinel_slots(kind)
    out = render(kind, slots)
    restored = out
    for name, value in slots.items():
        restored = restored.replace(value, "{" + name + "}")
    assert restored.encode() == golden(kind).encode()


@settings(max_examples=50)
@given(data=st.data())
def test_render_equals_naive_substitution(data):
    kind = data.draw(st.sampled_from(list(KINDS)))
    names = sorted(set(SLOT.findall(golden(kind))))
    text = st.text(st.characters(blacklist_characters="{}"), min_size=1, max_size=40)
    slots = {n: data.draw(text) for n in names}
    expected = golden(kind)
    for n, v in slots.items():
        expected = expected.replace("{" + n + "}", v)
    assert render(kind, slots) == expected


def test_ideation_contains_cardinality_sentence():
    slots = {"topic_description": "bias", "formatted_papers": "1. T: A", "ideas_n": 5,
             "examples": default_examples(), "method": "prompting"}
    out = render(PromptKind.IDEATION, slots)
    assert "You should generate 5 different ideas" in out
    assert out.startswith("You are an expert AI researcher.")
    assert not SLOT.search(out.replace(default_examples(), ""))


def test_critique_keeps_bounds_sentence():
    out = render(PromptKind.CRITIQUE, {"topic_description": "bias", "current_ideas_json_str": "{}"})
    assert "at least 1, at most 5" in out


def test_missing_slot_names_the_slot():
    with pytest.raises(MissingSlot, match="response_critic"):
        render(PromptKind.REVISE, {"topic_description": "t", "current_ideas_json_str": "{}"})


def test_slot_values_are_not_reinterpreted():
    out = render(PromptKind.CRITIQUE, {"topic_description": "{current_ideas_json_str}", "current_ideas_json_str": "X"})
    assert "topic of: {current_ideas_json_str}." in out


@pytest.mark.parametrize("persona", list(Persona))
def test_persona_text_is_byte_exact(persona):
    assert persona.prompt_text.encode() == (GOLDEN / "personas" / PERSONA_FILES[persona]).read_bytes()


# idea parsing --------------------------------------------------------------


def test_parse_five_ideas_preserves_names():
    ideas = parse_ideas(five_ideas(), 5)
    assert list(ideas) == [f"Idea {i}" for i in range(5)]
    assert ideas["Idea 2"].sections[Section.MOTIVATION] == "Motivation of idea2."
    assert all(b.structured for b in ideas.values())


def test_fenced_equals_unfenced():
    assert parse_ideas(five_ideas(fenced=True), 5) == parse_ideas(five_ideas(), 5)


def test_prose_around_json_is_ignored():
    raw = "Here are my ideas:\n" + five_ideas() + "\nHope this helps."
    assert parse_ideas(raw, 5) == parse_ideas(five_ideas(), 5)


def test_wrong_cardinality_carries_found():
    raw = json.dumps({f"Idea {i}": idea_text() for i in range(4)})
    with pytest.raises(WrongCardinality) as exc:
        parse_ideas(raw, 5)
    assert exc.value.found == 4 and exc.value.expected == 5


def test_duplicate_names_rejected():
    raw = '{"Same": "(1) Problem: a", "Same": "(1) Problem: b"}'
    with pytest.raises(DuplicateIdeaName):
        parse_ideas(raw, 2)


@pytest.mark.parametrize("raw", ["", "no json here", "[1, 2, 3]", "{broken"])
def test_unparseable(raw):
    with pytest.raises(UnparseableReply):
        parse_ideas(raw, 1)


def test_unstructured_value_goes_to_proposed_method():
    ideas = parse_ideas('{"Loose": "Just ask the model twice and vote."}', 1)
    body = ideas["Loose"]
    assert not body.structured
    assert body.sections[Section.PROPOSED_METHOD] == "Just ask the model twice and vote."
    assert body.sections[Section.PROBLEM] == ""


def test_nested_object_values_are_accepted():
    value = {"Problem": "p", "Existing Methods": "e", "Motivation": "m", "Proposed Method": "pm", "Experiment Plan": "x"}
    body = parse_ideas(json.dumps({"N": value}), 1)["N"]
    assert body.structured and body.sections[Section.EXPERIMENT_PLAN] == "x"


def test_markdown_headers_split():
    text = "# Problem\nP.\n# Existing Methods\nE.\n# Motivation\nM.\n# Proposed Method\nPM.\n# Experiment Plan\nX."
    body = split_sections(text)
    assert body.structured and body.sections[Section.PROPOSED_METHOD] == "PM."


@given(k=st.integers(1, 6), extra=st.integers(0, 3))
def test_never_more_than_k(k, extra):
    raw = json.dumps({f"I{i}": idea_text() for i in range(k + extra)})
    try:
        assert len(parse_ideas(raw, k)) == k
    except WrongCardinality:
        assert extra > 0


def test_ideas_to_json_is_two_space_indented():
    ideas = parse_ideas(five_ideas(), 5)
    out = ideas_to_json(ideas)
    assert out.split("\n")[1].startswith('  "Idea 0": ')
    assert json.loads(out) == {name: body.text() for name, body in ideas.items()}


def mock_reply(kind_prompt, seed):
    return MockProvider(seed=seed).chat(ChatRequest("s", kind_prompt, Decoding(), "m")).text


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 6))
def test_idea_round_trip_is_a_fixed_point(seed, k):
    prompt = render(PromptKind.IDEATION, {"topic_description": "bias", "formatted_papers": "1. T: A",
                                          "ideas_n": k, "examples": default_examples(), "method": "prompting"})
    first = parse_ideas(mock_reply(prompt, seed), k)
    second = parse_ideas(ideas_to_json(first), k)
    assert second == first
    assert parse_ideas(ideas_to_json(second), k) == second


# critiques -----------------------------------------------------------------


def test_two_labeled_items():
    raw = ('Missing metric detail: "We measure bias." - which metric?\n\n'
           'Involving humans: "Ask annotators." - avoid human studies.')
    p = parse_critique(raw)
    assert [i.category for i in p.items] == [CritiqueCategory.MISSING_METRIC_DETAIL, CritiqueCategory.INVOLVING_HUMANS]
    assert p.items[0].quoted_sentence == "We measure bias." and p.items[0].comment == "which metric?"
    assert not p.truncated


def test_template_example_label_maps_to_dataset_category():
    p = parse_critique('Missing data preparation detail: "Create a list" - how?')
    assert p.items[0].category is CritiqueCategory.MISSING_DATASET_DETAIL


def test_case_insensitive_and_other():
    p = parse_critique('- TEST CASES: "x" - add one\n- Novelty: "y" - seems incremental')
    assert [i.category for i in p.items] == [CritiqueCategory.TEST_CASES, CritiqueCategory.OTHER]


def test_six_items_truncate_to_five():
    raw = "\n".join(f'- Missing prompt detail: "s{i}" - c{i}' for i in range(6))
    p = parse_critique(raw)
    assert len(p.items) == 5 and p.truncated
    assert [i.quoted_sentence for i in p.items] == [f"s{i}" for i in range(5)]


def test_preamble_is_not_an_item():
    p = parse_critique('Here are my criticisms:\n1. Test cases: "a" - b\n2. Missing metric detail: "c" - d')
    assert len(p.items) == 2


@pytest.mark.parametrize("raw", ["", "   \n\t"])
def test_empty_critique_unparseable(raw):
    with pytest.raises(UnparseableReply):
        parse_critique(raw)


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6))
def test_mock_critique_bounds_and_fixed_point(seed):
    prompt = render(PromptKind.CRITIQUE, {"topic_description": "bias", "current_ideas_json_str": five_ideas()})
    p = parse_critique(mock_reply(prompt, seed))
    assert 1 <= len(p.items) <= 5
    again = parse_critique(p.text())
    assert again == p
    assert CritiquePayload.from_payload(json.loads(json.dumps(p.to_payload()))) == p


def test_aggregate():
    one = parse_critique('Test cases: "a" - b')
    two = parse_critique('Missing metric detail: "c" - d\nInvolving humans: "e" - f')
    assert aggregate_critiques([one], [Persona.AI_RESEARCHER]) == 'Reviewer 1 (AIResearcher):\n- Test cases: "a" - b'
    out = aggregate_critiques([one, two, one], [Persona.AI_RESEARCHER, Persona.FINANCE_AI, Persona.PHYSICS_AI])
    headers = re.findall(r"^Reviewer \d \(\w+\):$", out, re.MULTILINE)
    assert headers == ["Reviewer 1 (AIResearcher):", "Reviewer 2 (FinanceAI):", "Reviewer 3 (PhysicsAI):"]
    assert len(re.findall(r"^- ", out, re.MULTILINE)) == 4


def test_aggregate_guards():
    with pytest.raises(ValueError):
        aggregate_critiques([CritiquePayload(())], [Persona.AI_RESEARCHER])
    with pytest.raises(ValueError):
        aggregate_critiques([], [])
    with pytest.raises(ValueError):
        aggregate_critiques([parse_critique("x")], [])
