"""Chat and embedding client with retries, a concurrency cap, and pluggable transports."""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import httpx
import numpy as np

from ideadialog.core import Decoding, TokenUsage, ValidationError

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    """Credentials rejected; never retried."""


class RateLimitExhausted(GatewayError):
    """Transient failures persisted through every allowed attempt."""


class MalformedProviderReply(GatewayError):
    pass


class ProviderError(GatewayError):
    """Non-retryable provider failure other than authentication."""


class TransportError(Exception):
    """Raised by transports; ``status`` is the HTTP status, None for network faults."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status

    @property
    def retryable(self) -> bool:
        return self.status is None or self.status == 429 or self.status >= 500


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    decoding: Decoding
    model_name: str

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValidationError("chat prompts must be nonempty")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: TokenUsage
    latency_ms: int
    attempts: int = 1


class Transport(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


@dataclass
class BackoffPolicy:
    base_s: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2
    max_attempts: int = 6

    def delay(self, retry_index: int, rng: random.Random) -> float:
        """Delay before retry number ``retry_index`` (0-based).

        With factor >= 2 and jitter <= 1/3 the delays never shrink from one
        retry to the next, whatever the jitter draws.
        """
        nominal = self.base_s * self.factor**retry_index
        return nominal * (1.0 + rng.uniform(-self.jitter, self.jitter))


@dataclass
class Gateway:
    """Shared front door to one provider.

    Safe to use from many threads: admission goes through a semaphore of
    ``max_concurrency`` slots, released while sleeping between retries.
    """

    transport: Transport
    max_concurrency: int = 8
    backoff: BackoffPolicy = field(default_factory=BackoffPolicy)
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    def __post_init__(self) -> None:
        self._slots = threading.BoundedSemaphore(self.max_concurrency)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0
        self.delays: list[float] = []

    def _admit(self) -> None:
        self._slots.acquire()
        with self._lock:
            self.in_flight += 1
            self.calls += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)

    def _release(self) -> None:
        with self._lock:
            self.in_flight -= 1
        self._slots.release()

    def _with_retries(self, fn: Callable[[], Any], what: str) -> tuple[Any, int]:
        attempts = 0
        while True:
            attempts += 1
            self._admit()
            try:
                return fn(), attempts
            except TransportError as exc:
                if exc.status in (401, 403):
                    raise AuthError(str(exc)) from exc
                if not exc.retryable:
                    raise ProviderError(f"{what} failed with status {exc.status}: {exc}") from exc
                if attempts >= self.backoff.max_attempts:
                    raise RateLimitExhausted(f"{what} failed after {attempts} attempts: {exc}") from exc
                last = exc
            finally:
                self._release()
            with self._lock:
                delay = self.backoff.delay(attempts - 1, self.rng)
                self.delays.append(delay)
            logger.warning("%s transient failure (%s), retry %d in %.1fs", what, last, attempts, delay)
            self.sleep(delay)

    def complete(self, request: ChatRequest) -> ChatResponse:
        resp, attempts = self._with_retries(lambda: self.transport.chat(request), "chat")
        if not isinstance(resp, ChatResponse) or resp.text is None:
            raise MalformedProviderReply("transport returned no chat text")
        return ChatResponse(resp.text, resp.token_usage, resp.latency_ms, attempts)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed ``texts``; every returned vector has unit Euclidean norm."""
        if not texts:
            raise ValueError("embed needs at least one text")
        vectors, _ = self._with_retries(lambda: self.transport.embed(list(texts)), "embed")
        if len(vectors) != len(texts):
            raise MalformedProviderReply(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise MalformedProviderReply("embedding vectors have inconsistent dimensions")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0):
            raise MalformedProviderReply("provider returned a zero embedding vector")
        return list(arr / norms[:, None])


class OpenAICompatTransport:
    """OpenAI-style ``/chat/completions`` and ``/embeddings`` over HTTP."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None,
        embedding_model: str = "all-MiniLM-L6-v2",
        timeout_s: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.embedding_model = embedding_model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = client or httpx.Client(timeout=timeout_s)
        self.headers = headers

    @classmethod
    def from_env(cls, base_url: str, api_key_env: str, **kw: Any) -> OpenAICompatTransport:
        base_url = os.environ.get("IDEADIALOG_BASE_URL", base_url)
        return cls(base_url, os.environ.get(api_key_env), **kw)

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            r = self.client.post(f"{self.base_url}{path}", json=payload, headers=self.headers)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"network error: {exc}") from exc
        if r.status_code >= 400:
            raise TransportError(r.text[:500], status=r.status_code)
        try:
            return r.json()
        except ValueError as exc:
            raise MalformedProviderReply(f"non-JSON body from {path}") from exc

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        }
        t0 = time.monotonic()
        body = self._post("/chat/completions", payload)
        latency = int((time.monotonic() - t0) * 1000)
        try:
            text = body["choices"][0]["message"].get("content") or ""
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise MalformedProviderReply(f"unexpected chat body: {str(body)[:200]}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            text,
            TokenUsage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            latency,
        )

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        body = self._post("/embeddings", {"model": self.embedding_model, "input": list(texts)})
        try:
            data = sorted(body["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, d["embedding"])) for d in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProviderReply(f"unexpected embeddings body: {str(body)[:200]}") from exc


class SplitTransport:
    """Chat from one transport, embeddings from another (e.g. a local MiniLM server)."""

    def __init__(self, chat: Transport, embed: Transport):
        self._chat = chat
        self._embed = embed

    def chat(self, request: ChatRequest) -> ChatResponse:
        return self._chat.chat(request)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return self._embed.embed(texts)
