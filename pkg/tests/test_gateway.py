import json
import math
import random
import threading
import time

import httpx
import pytest
from hypothesis import given, strategies as st

from ideadialog.core import Decoding, TokenUsage
from ideadialog.gateway import (
    AuthError,
    BackoffPolicy,
    ChatRequest,
    ChatResponse,
    Gateway,
    MalformedProviderReply,
    OpenAICompatTransport,
    ProviderError,
    RateLimitExhausted,
    TransportError,
)
from ideadialog.mock import MockProvider
from ideadialog.prompts import PromptKind, default_examples, parse_ideas, render


def req(user="Hello", system="You are an expert AI researcher."):
    return ChatRequest(system, user, Decoding(), "gpt-4o-mini")


class Scripted:
    """Transport that raises/returns a scripted sequence of outcomes."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def chat(self, request):
        self.calls += 1
        item = self.outcomes.pop(0)
        if isinstance(item, int):
            raise TransportError("scripted", status=item)
        return ChatResponse(item, TokenUsage(1, 1), 5)

    def embed(self, texts):
        self.calls += 1
        item = self.outcomes.pop(0)
        if isinstance(item, int):
            raise TransportError("scripted", status=item)
        return item


def hand_cosine(u, v):
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u, v):
        dot += a * b
        nu += a * a
        nv += b * b
    return dot / (math.sqrt(nu) * math.sqrt(nv))


def test_mock_is_deterministic():
    gw = Gateway(MockProvider(seed=7))
    assert gw.complete(req("P")) == gw.complete(req("P"))


def test_429_then_200_records_two_attempts():
    sleeps = []
    t = Scripted([429, "ok"])
    resp = Gateway(t, sleep=sleeps.append).complete(req())
    assert resp.text == "ok" and resp.attempts == 2
    assert t.calls == 2 and len(sleeps) == 1


@pytest.mark.parametrize("status", [401, 403])
def test_auth_error_is_not_retried(status):
    t = Scripted([status, "never"])
    with pytest.raises(AuthError):
        Gateway(t, sleep=lambda s: None).complete(req())
    assert t.calls == 1


def test_other_client_errors_are_not_retried():
    t = Scripted([400, "never"])
    with pytest.raises(ProviderError):
        Gateway(t, sleep=lambda s: None).complete(req())
    assert t.calls == 1


def test_retries_exhaust_after_cap():
    sleeps = []
    t = Scripted([503] * 10)
    with pytest.raises(RateLimitExhausted):
        Gateway(t, sleep=sleeps.append).complete(req())
    assert t.calls == 6
    assert len(sleeps) == 5
    assert all(a <= b for a, b in zip(sleeps, sleeps[1:]))
    assert 0.8 <= sleeps[0] <= 1.2


def test_network_errors_are_retried():
    class Flaky(Scripted):
        def chat(self, request):
            self.calls += 1
            if self.calls == 1:
                raise TransportError("connection reset")
            return ChatResponse("ok", TokenUsage(1, 1), 5)

    assert Gateway(Flaky([]), sleep=lambda s: None).complete(req()).attempts == 2


@given(seed=st.integers(0, 2**32 - 1))
def test_backoff_never_shrinks(seed):
    policy = BackoffPolicy()
    rng = random.Random(seed)
    delays = [policy.delay(i, rng) for i in range(policy.max_attempts - 1)]
    assert all(b >= a for a, b in zip(delays, delays[1:]))
    for i, d in enumerate(delays):
        assert 0.8 * 2**i <= d <= 1.2 * 2**i


def test_concurrency_cap_under_stress():
    observed = []
    lock = threading.Lock()
    state = {"now": 0}

    class Slow:
        def chat(self, request):
            with lock:
                state["now"] += 1
                observed.append(state["now"])
            time.sleep(0.005)
            with lock:
                state["now"] -= 1
            return ChatResponse(request.user_prompt, TokenUsage(1, 1), 1)

        def embed(self, texts):
            raise AssertionError

    gw = Gateway(Slow(), max_concurrency=4)
    threads = [threading.Thread(target=gw.complete, args=(req(f"task {i}"),)) for i in range(100)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert gw.calls == 100
    assert max(observed) <= 4
    assert gw.peak_in_flight <= 4
    assert gw.in_flight == 0


def test_embed_normalizes_and_is_deterministic():
    gw = Gateway(MockProvider(seed=7))
    [v] = gw.embed(["a"])
    assert abs(float((v @ v) ** 0.5) - 1) < 1e-6
    x1, x2 = gw.embed(["x", "x"])
    assert list(x1) == list(x2)


def test_embed_renormalizes_provider_vectors():
    t = Scripted([[[3.0, 4.0], [0.0, 2.0]]])
    u, v = Gateway(t).embed(["p", "q"])
    assert list(u) == [0.6, 0.8] and list(v) == [0.0, 1.0]


def test_embed_rejects_bad_replies():
    with pytest.raises(MalformedProviderReply):
        Gateway(Scripted([[[1.0, 0.0]]])).embed(["a", "b"])
    with pytest.raises(MalformedProviderReply):
        Gateway(Scripted([[[0.0, 0.0]]])).embed(["a"])
    with pytest.raises(ValueError):
        Gateway(Scripted([])).embed([])


def test_mock_pair_cosine_matches_hand_rolled():
    gw = Gateway(MockProvider(seed=7))
    x, y = gw.embed(["x", "y"])
    assert abs(float(x @ y) - hand_cosine(list(x), list(y))) < 1e-12


@given(texts=st.lists(st.text(), min_size=1, max_size=8), seed=st.integers(0, 1000))
def test_embed_norm_property(texts, seed):
    for v in Gateway(MockProvider(seed=seed)).embed(texts):
        assert abs(float(v @ v) ** 0.5 - 1) < 1e-6


def test_different_seeds_give_different_replies_on_1000_prompts():
    a, b = MockProvider(seed=1), MockProvider(seed=2)
    prompts = [f"prompt number {i}" for i in range(1000)]
    replies_a = [a.chat(req(p)).text for p in prompts]
    replies_b = [b.chat(req(p)).text for p in prompts]
    assert len(set(replies_a)) == 1000
    assert all(x != y for x, y in zip(replies_a, replies_b))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_mock_idea_reply_parses_to_k_ideas(k):
    prompt = render(
        PromptKind.IDEATION,
        {"topic_description": "math reasoning", "formatted_papers": "1. A: B", "ideas_n": str(k), "examples": default_examples(), "method": "prompting"},
    )
    text = MockProvider(seed=3).chat(req(prompt)).text
    assert len(parse_ideas(text, k)) == k


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("sys", "", Decoding(), "m")
    with pytest.raises(ValueError):
        Decoding(temperature=-1.0)


def test_openai_wire_format():
    seen = []

    def handler(request: httpx.Request):
        body = json.loads(request.content)
        seen.append((request.url.path, request.headers.get("authorization"), body))
        if request.url.path.endswith("/chat/completions"):
            return httpx.Response(200, json={
                "choices": [{"message": {"role": "assistant", "content": "hi"}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 2},
            })
        return httpx.Response(200, json={"data": [
            {"index": 1, "embedding": [0.0, 2.0]}, {"index": 0, "embedding": [1.0, 0.0]},
        ]})

    t = OpenAICompatTransport("https://api.example/v1/", "sk-test", client=httpx.Client(transport=httpx.MockTransport(handler)))
    gw = Gateway(t)
    resp = gw.complete(ChatRequest("sys", "user", Decoding(0.5, 0.9, 100), "gpt-4o-mini"))
    assert resp.text == "hi" and resp.token_usage == TokenUsage(11, 2)
    path, auth, body = seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer sk-test"
    assert body == {
        "model": "gpt-4o-mini",
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "user"}],
        "temperature": 0.5, "top_p": 0.9, "max_tokens": 100,
    }
    first, second = gw.embed(["a", "b"])
    assert list(first) == [1.0, 0.0] and list(second) == [0.0, 1.0]
    assert seen[1][2] == {"model": "all-MiniLM-L6-v2", "input": ["a", "b"]}


def test_openai_empty_completion_is_empty_string_and_429_retries():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(429, text="slow down")
        return httpx.Response(200, json={"choices": [{"message": {"content": None}}]})

    t = OpenAICompatTransport("http://x", None, client=httpx.Client(transport=httpx.MockTransport(handler)))
    resp = Gateway(t, sleep=lambda s: None).complete(req())
    assert resp.text == "" and resp.attempts == 2
