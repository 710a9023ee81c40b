"""Multimodal-model gateway: wire adapter, retry policy, scripted mock.

Clients expose one method, ``complete(request) -> str``. The retry
wrapper only re-issues transport-class failures; auth problems and
backend refusals surface immediately.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Union

import requests

from .templates import LmmRequest, PartKind, RequestPurpose

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
DEFAULT_MAX_IN_FLIGHT = 4

# Backoff shape: full jitter over an exponentially growing cap.
BACKOFF_BASE = 1.0
BACKOFF_CAP = 30.0


class LmmError(Exception):
    """Base class for gateway failures."""


class TransportError(LmmError):
    """Network / availability failure; safe to retry."""


class AuthError(LmmError):
    """Credential problem; retrying cannot help."""


class BackendRefusal(LmmError):
    """The backend returned no usable content (filtered or empty)."""


class RetriesExhausted(LmmError):
    """All retry attempts failed; chained to the last transport error."""


class ScriptExhausted(TransportError):
    """A scripted client ran out of queued replies."""


class LmmClient(Protocol):
    def complete(self, request: LmmRequest) -> str: ...


@dataclass(frozen=True)
class LmmBackendDescriptor:
    """Where and how to reach a multimodal model.

    ``auth_env_var`` names the environment variable holding the bearer
    token; the token itself is never stored. ``kind`` selects the client
    implementation (``openai_chat`` or ``scripted``).
    """

    id: str
    kind: str = "openai_chat"
    endpoint: str = ""
    model_name: str = ""
    auth_env_var: str = ""
    timeout: float = DEFAULT_TIMEOUT
    script_file: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("backend descriptor requires an id")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.kind == "openai_chat" and not self.endpoint:
            raise ValueError("openai_chat backend requires an endpoint")


class CallRecorder:
    """Thread-safe label log shared across mock backends.

    Lets tests assert the merged chronological order of model and
    generator calls in one place.
    """

    def __init__(self) -> None:
        self._labels: list[str] = []
        self._lock = threading.Lock()

    def record(self, label: str) -> None:
        with self._lock:
            self._labels.append(label)

    @property
    def labels(self) -> list[str]:
        with self._lock:
            return list(self._labels)


# Labels recorded for each request purpose.
PURPOSE_LABELS = {
    RequestPurpose.GENERATE: "gen_prompts",
    RequestPurpose.SELECT: "select",
    RequestPurpose.FEEDBACK: "feedback",
    RequestPurpose.REVISE: "revise",
}


_SCRIPTED_DESCRIPTOR = LmmBackendDescriptor(id="scripted-lmm", kind="scripted")


class ScriptedLmm:
    """Deterministic mock: replays queued replies and records requests.

    Queue entries are reply strings, or exceptions to raise in place of a
    reply. An exhausted queue raises :class:`ScriptExhausted`, which is a
    transport-class error by design.
    """

    def __init__(
        self,
        script: Iterable[Union[str, Exception]],
        descriptor: LmmBackendDescriptor = _SCRIPTED_DESCRIPTOR,
        recorder: CallRecorder | None = None,
    ) -> None:
        self.descriptor = descriptor
        self._script: list[Union[str, Exception]] = list(script)
        self._recorder = recorder
        self._lock = threading.Lock()
        self.requests: list[LmmRequest] = []

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._script)

    def complete(self, request: LmmRequest) -> str:
        with self._lock:
            self.requests.append(request)
            if self._recorder is not None:
                self._recorder.record(PURPOSE_LABELS[request.purpose])
            if not self._script:
                raise ScriptExhausted("scripted reply queue is empty")
            entry = self._script.pop(0)
        if isinstance(entry, Exception):
            raise entry
        return entry


def _request_payload(descriptor: LmmBackendDescriptor, request: LmmRequest) -> dict:
    content = []
    for part in request.parts:
        if part.kind is PartKind.TEXT:
            content.append({"type": "text", "text": part.text})
        else:
            assert part.image is not None
            encoded = base64.b64encode(part.image.data).decode("ascii")
            media = part.image.media_type.value
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/{media};base64,{encoded}"},
                }
            )
    return {
        "model": descriptor.model_name,
        "messages": [{"role": "user", "content": content}],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }


class OpenAiChatClient:
    """Adapter for chat-completions style HTTP endpoints.

    Images travel as base64 data URLs inside the user message. The
    bearer token is read from the descriptor's named environment
    variable at call time.
    """

    def __init__(
        self,
        descriptor: LmmBackendDescriptor,
        session: requests.Session | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ) -> None:
        self.descriptor = descriptor
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.descriptor.auth_env_var:
            token = os.environ.get(self.descriptor.auth_env_var)
            if not token:
                raise AuthError(
                    f"environment variable {self.descriptor.auth_env_var} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: LmmRequest) -> str:
        url = self.descriptor.endpoint.rstrip("/") + "/chat/completions"
        payload = _request_payload(self.descriptor, request)
        headers = self._headers()
        with self._slots:
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=self.descriptor.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                raise TransportError(f"request to {url} failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {response.status_code})")
        if response.status_code in (408, 429) or response.status_code >= 500:
            raise TransportError(f"backend unavailable (HTTP {response.status_code})")
        if response.status_code != 200:
            raise LmmError(f"unexpected HTTP {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            choice = body["choices"][0]
            content = choice["message"]["content"]
            finish_reason = choice.get("finish_reason")
        except (ValueError, LookupError, TypeError) as exc:
            raise LmmError(f"malformed completion body: {exc}") from exc
        if finish_reason == "content_filter" or not content:
            raise BackendRefusal(f"backend returned no content (finish: {finish_reason})")
        return content


def build_client(descriptor: LmmBackendDescriptor) -> LmmClient:
    """Construct the client matching a descriptor's kind."""
    if descriptor.kind == "scripted":
        if not descriptor.script_file:
            raise ValueError("scripted backend requires script_file")
        with open(descriptor.script_file, "r", encoding="utf-8") as fh:
            script = json.load(fh)
        if not isinstance(script, list) or not all(isinstance(s, str) for s in script):
            raise ValueError("script file must hold a JSON list of reply strings")
        return ScriptedLmm(script, descriptor=descriptor)
    if descriptor.kind == "openai_chat":
        return OpenAiChatClient(descriptor)
    raise ValueError(f"unknown LMM backend kind: {descriptor.kind}")


def complete_with_retry(
    client: LmmClient,
    request: LmmRequest,
    limit: int,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> str:
    """Call ``client`` with up to ``limit`` retries on transport errors.

    Delay before retry k is uniform in [0, min(cap, base * 2**k)]. Fatal
    errors (auth, refusal, anything non-transport) propagate untouched.
    """
    if limit < 0:
        raise ValueError("retry limit must be >= 0")
    rng = rng or random.Random()
    last: TransportError | None = None
    for attempt in range(limit + 1):
        try:
            return client.complete(request)
        except TransportError as exc:
            last = exc
            if attempt == limit:
                break
            delay = rng.uniform(0.0, min(BACKOFF_CAP, BACKOFF_BASE * (2.0**attempt)))
            logger.warning(
                "transport error (%s); retry %d/%d in %.2fs", exc, attempt + 1, limit, delay
            )
            sleep(delay)
    raise RetriesExhausted(f"gave up after {limit + 1} attempts: {last}") from last
