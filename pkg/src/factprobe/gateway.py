"""HTTP gateway to chat-completion backends.

Speaks the common /v1/chat/completions wire protocol so the probe,
judge, and generator can each live behind any compatible server,
including the bundled mock. One client instance is safe to share
across threads: the in-flight limit and both counters are internal.

Credentials come from an environment variable (FACTPROBE_API_KEY by
default), never from flags or config files.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import requests

from .core import FactProbeError, TokenDistribution

DEFAULT_API_KEY_ENV = "FACTPROBE_API_KEY"

_ROLES = ("system", "user", "assistant")


class GatewayErrorKind(str, Enum):
    TRANSPORT = "transport"
    PROTOCOL = "protocol"
    RATE_LIMITED = "rate_limited"
    MISSING_LOGPROBS = "missing_logprobs"


class GatewayError(FactProbeError):
    """A failed gateway call.

    kind says what went wrong. For MISSING_LOGPROBS the response
    attribute still carries the parsed text so alignment can proceed
    while the uniformity check is skipped.
    """

    def __init__(self, kind: GatewayErrorKind, message: str,
                 response: Optional["ChatResponse"] = None,
                 status: Optional[int] = None):
        super().__init__(message)
        self.kind = kind
        self.response = response
        self.status = status


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request.

    messages is a tuple of (role, content) pairs. extra carries body
    fields outside the core protocol (the beam_size extension); plain
    backends ignore them.
    """

    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 256
    want_logprobs: bool = False
    top_k: int = 5
    extra: Optional[dict] = None

    def __post_init__(self):
        if not self.model:
            raise ValueError("model must be non-empty")
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, content in self.messages:
            if role not in _ROLES:
                raise ValueError(f"unknown role: {role!r}")
            if not isinstance(content, str):
                raise ValueError("message content must be a string")
        if not (math.isfinite(self.temperature) and self.temperature >= 0.0):
            raise ValueError("temperature must be finite and >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.want_logprobs and not 1 <= self.top_k <= 20:
            raise ValueError("top_k must be in [1, 20] when logprobs are requested")

    def payload(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = self.top_k
        if self.extra:
            body.update(self.extra)
        return body


@dataclass(frozen=True)
class ChatResponse:
    """Parsed reply: the text plus, when requested and served, one
    top-k distribution per generated token."""

    text: str
    token_distributions: Optional[tuple[TokenDistribution, ...]] = None
    model: str = ""


class GatewayClient:
    """Thread-safe client with retries, counters, and an in-flight cap.

    call_count counts logical complete() calls that reached the wire;
    every extra attempt behind the same call lands in retry_count.
    """

    def __init__(self, base_url: str, timeout_s: float = 30.0, max_retries: int = 3,
                 backoff_factor: float = 2.0, retry_initial_s: float = 0.5,
                 concurrency_limit: int = 8, api_key_env: str = DEFAULT_API_KEY_ENV,
                 session: Optional[requests.Session] = None):
        if concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_factor = backoff_factor
        self.retry_initial_s = retry_initial_s
        self.concurrency_limit = concurrency_limit
        self.api_key_env = api_key_env
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(concurrency_limit)
        self._lock = threading.Lock()
        self._call_count = 0
        self._retry_count = 0

    @property
    def call_count(self) -> int:
        with self._lock:
            return self._call_count

    @property
    def retry_count(self) -> int:
        with self._lock:
            return self._retry_count

    def reset_counts(self):
        with self._lock:
            self._call_count = 0
            self._retry_count = 0

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ChatRequest) -> ChatResponse:
        """POST the request, retrying transient failures, and parse the reply.

        Raises GatewayError: TRANSPORT for network trouble and 5xx,
        RATE_LIMITED for a 429 that survives the retries, PROTOCOL for
        anything malformed, MISSING_LOGPROBS (response attached) when
        logprobs were requested but are absent or thinner than top_k.
        """
        url = f"{self.base_url}/v1/chat/completions"
        payload = request.payload()
        headers = self._headers()
        attempts = self.max_retries + 1
        last_error: Optional[GatewayError] = None

        with self._lock:
            self._call_count += 1

        with self._gate:
            for attempt in range(attempts):
                if attempt > 0:
                    with self._lock:
                        self._retry_count += 1
                    time.sleep(self.retry_initial_s * self.backoff_factor ** (attempt - 1))
                try:
                    resp = self._session.post(url, json=payload, headers=headers,
                                              timeout=self.timeout_s)
                except requests.RequestException as exc:
                    last_error = GatewayError(GatewayErrorKind.TRANSPORT,
                                              f"transport failure: {exc}")
                    continue
                if resp.status_code == 429:
                    last_error = GatewayError(GatewayErrorKind.RATE_LIMITED,
                                              "backend rate limited the request",
                                              status=429)
                    continue
                if resp.status_code >= 500:
                    last_error = GatewayError(GatewayErrorKind.TRANSPORT,
                                              f"backend error {resp.status_code}",
                                              status=resp.status_code)
                    continue
                if resp.status_code != 200:
                    raise GatewayError(GatewayErrorKind.PROTOCOL,
                                       f"unexpected status {resp.status_code}: {resp.text[:200]}",
                                       status=resp.status_code)
                return self._parse(request, resp)
        raise last_error if last_error else GatewayError(
            GatewayErrorKind.TRANSPORT, "no attempt was made")

    def _parse(self, request: ChatRequest, resp) -> ChatResponse:
        try:
            data = resp.json()
        except ValueError as exc:
            raise GatewayError(GatewayErrorKind.PROTOCOL,
                               f"response is not JSON: {exc}") from exc
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            model = str(data.get("model", ""))
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(GatewayErrorKind.PROTOCOL,
                               f"malformed completion body: {exc!r}") from exc

        if not request.want_logprobs:
            return ChatResponse(text=text, token_distributions=None, model=model)

        bare = ChatResponse(text=text, token_distributions=None, model=model)
        content = ((choice.get("logprobs") or {}).get("content")) or []
        distributions = []
        for position, entry in enumerate(content):
            tops = entry.get("top_logprobs") or []
            try:
                pairs = [(str(t["token"]), float(t["logprob"])) for t in tops]
            except (KeyError, TypeError, ValueError) as exc:
                raise GatewayError(GatewayErrorKind.PROTOCOL,
                                   f"malformed logprobs at token {position}: {exc!r}") from exc
            pairs.sort(key=lambda p: -p[1])
            if len(pairs) < request.top_k:
                raise GatewayError(
                    GatewayErrorKind.MISSING_LOGPROBS,
                    f"token {position} offers {len(pairs)} alternatives, need {request.top_k}",
                    response=bare)
            pairs = pairs[:request.top_k]
            try:
                distributions.append(TokenDistribution(
                    token_texts=tuple(p[0] for p in pairs),
                    logprobs=tuple(p[1] for p in pairs)))
            except ValueError as exc:
                raise GatewayError(GatewayErrorKind.PROTOCOL,
                                   f"invalid logprob values at token {position}: {exc}") from exc
        if not distributions:
            raise GatewayError(GatewayErrorKind.MISSING_LOGPROBS,
                               "backend returned no logprobs", response=bare)
        return ChatResponse(text=text, token_distributions=tuple(distributions), model=model)
