import json

import pytest

from ideadialog.core import IdeaOrigin, IdeaRecord, Section
from ideadialog.expander import ExpansionFailed, NotASurvivor, Proposal, expand, expand_pool, expansion_prompt
from ideadialog.gateway import Gateway
from ideadialog.mock import MockProvider


def make_idea(i, survived=True):
    body = {s: f"{s.value} of idea {i}." for s in Section}
    return IdeaRecord(f"Idea {i}", body, IdeaOrigin("bias", "baseline", i // 5, i % 5), survived_dedup=survived)


def test_mock_expansion_has_all_headers(topic):
    gw = Gateway(MockProvider(seed=1))
    p = expand(make_idea(0), topic, gw)
    for header in ("(1) Problem:", "(2) Existing Methods:", "(3) Motivation:", "(4) Proposed Method:", "(5) Experiment Plan:"):
        assert header in p.expanded_text
    assert p == expand(make_idea(0), topic, Gateway(MockProvider(seed=1)))
    assert p.proposal_id == p.idea_id == "bias/baseline/s00/i0"


def test_prompt_carries_idea_and_topic(topic):
    prompt = expansion_prompt(make_idea(3), topic)
    assert 'The idea is named "Idea 3"' in prompt
    assert "(4) Proposed Method: ProposedMethod of idea 3." in prompt
    assert topic.description in prompt


@pytest.mark.parametrize("flag", [False, None])
def test_non_survivor_makes_no_call(topic, flag):
    gw = Gateway(MockProvider())
    with pytest.raises(NotASurvivor):
        expand(make_idea(0, survived=flag), topic, gw)
    assert gw.calls == 0


def test_pool_expands_only_survivors_and_cache_is_free(topic):
    ideas = [make_idea(i, survived=i % 4 != 0) for i in range(40)]
    gw = Gateway(MockProvider(seed=2))
    proposals = expand_pool(ideas, topic, gw)
    assert len(proposals) == 30 == gw.calls
    assert [p.idea_id for p in proposals] == [i.idea_id for i in ideas if i.survived_dedup]

    stored = [json.loads(json.dumps(p.to_dict())) for p in proposals]
    cache = {d["idea_id"]: Proposal.from_dict(d) for d in stored}
    gw2 = Gateway(MockProvider(seed=2))
    again = expand_pool(ideas, topic, gw2, cached=cache)
    assert gw2.calls == 0
    assert again == proposals


class Empty:
    def chat(self, request):
        from ideadialog.core import TokenUsage
        from ideadialog.gateway import ChatResponse

        return ChatResponse("   ", TokenUsage(0, 0), 1)


def test_empty_expansion_fails(topic):
    with pytest.raises(ExpansionFailed):
        expand(make_idea(0), topic, Gateway(Empty()))
