"""Provider-agnostic chat-model boundary.

Two backends share one interface: a live HTTP client speaking the common
chat-completions wire format, and a deterministic scripted mock for hermetic
tests. Model names, endpoints and keys are configuration, never code
constants, and every call is appended to an inspectable log so pipeline
tests (and cost accounting) can audit exactly what was sent.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field, replace

GENERATOR = "generator"
JUDGE = "judge"
ROLE_IDS = (GENERATOR, JUDGE)

DEFAULT_API_URL_ENV = "CADSMITH_API_URL"
DEFAULT_API_KEY_ENV = "CADSMITH_API_KEY"


class LlmError(Exception):
    pass


class LlmConfigError(LlmError):
    pass


class LlmAuthError(LlmError):
    pass


class LlmTimeoutError(LlmError):
    pass


class LlmRetriesExhausted(LlmError):
    pass


class MockTranscriptError(LlmError):
    """The scripted transcript disagrees with the calls being made: a test bug."""


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    image_png: bytes | None = None


@dataclass(frozen=True)
class ChatRequest:
    role_config_id: str
    system: str
    messages: tuple[Message, ...]
    max_tokens: int = 4096
    temperature: float = 0.0

    def __post_init__(self):
        if self.role_config_id not in ROLE_IDS:
            raise LlmConfigError(f"unknown role config {self.role_config_id!r}")
        if not self.messages:
            raise LlmConfigError("request needs at least one message")
        if self.role_config_id != JUDGE and any(m.image_png for m in self.messages):
            raise LlmConfigError("image attachments are only allowed on judge requests")

    def flat_text(self) -> str:
        return "\n".join([self.system] + [m.text for m in self.messages])

    @property
    def image_count(self) -> int:
        return sum(1 for m in self.messages if m.image_png)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: tuple[int, int]
    latency_ms: float


@dataclass(frozen=True)
class LlmConfig:
    # The stated default pairing: a stronger judge model than the generator.
    generator_model: str = "claude-sonnet"
    judge_model: str = "claude-opus"
    api_url_env: str = DEFAULT_API_URL_ENV
    api_key_env: str = DEFAULT_API_KEY_ENV
    generator_temperature: float = 0.2
    judge_temperature: float = 0.0
    max_tokens: int = 4096
    request_timeout_s: float = 120.0
    max_attempts: int = 3
    concurrency: int = 2

    def model_for(self, role_config_id: str) -> str:
        return self.judge_model if role_config_id == JUDGE else self.generator_model

    def temperature_for(self, role_config_id: str) -> float:
        return (self.judge_temperature if role_config_id == JUDGE
                else self.generator_temperature)


@dataclass
class CallRecord:
    index: int
    role_config_id: str
    n_images: int
    request_sha256: str
    request_chars: int
    response_chars: int
    usage_in: int
    usage_out: int
    latency_ms: float

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, data: dict) -> "CallRecord":
        return cls(**data)


class CallLog:
    """Append-only record of every chat call made through a client."""

    def __init__(self, records: list[CallRecord] | None = None):
        self._records: list[CallRecord] = list(records or [])
        self._lock = threading.Lock()

    def record(self, request: ChatRequest, response: ChatResponse) -> CallRecord:
        digest = hashlib.sha256(request.flat_text().encode()).hexdigest()
        with self._lock:
            rec = CallRecord(
                index=len(self._records),
                role_config_id=request.role_config_id,
                n_images=request.image_count,
                request_sha256=digest,
                request_chars=len(request.flat_text()),
                response_chars=len(response.text),
                usage_in=response.usage[0],
                usage_out=response.usage[1],
                latency_ms=response.latency_ms,
            )
            self._records.append(rec)
            return rec

    @property
    def records(self) -> list[CallRecord]:
        return list(self._records)

    def counts_by_role(self) -> dict[str, int]:
        counts = {role: 0 for role in ROLE_IDS}
        for rec in self._records:
            counts[rec.role_config_id] = counts.get(rec.role_config_id, 0) + 1
        return counts

    def to_json(self) -> list[dict]:
        return [rec.to_json() for rec in self._records]

    @classmethod
    def from_json(cls, data: list[dict]) -> "CallLog":
        return cls([CallRecord.from_json(d) for d in data])


class ChatClient:
    """Thread-safe base: subclasses implement `_complete`."""

    def __init__(self, cfg: LlmConfig):
        self.cfg = cfg
        self.call_log = CallLog()
        self._sem = threading.Semaphore(cfg.concurrency)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._sem:
            response = self._complete(request)
        self.call_log.record(request, response)
        return response

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class LiveChatClient(ChatClient):
    """POSTs to a chat-completions endpoint with retry on transient failures."""

    def __init__(self, cfg: LlmConfig):
        super().__init__(cfg)
        self.api_url = os.environ.get(cfg.api_url_env, "")
        self.api_key = os.environ.get(cfg.api_key_env, "")
        if not self.api_url:
            raise LlmConfigError(f"environment variable {cfg.api_url_env} not set")
        if not self.api_key:
            raise LlmConfigError(f"environment variable {cfg.api_key_env} not set")

    def _payload(self, request: ChatRequest) -> dict:
        messages = [{"role": "system", "content": request.system}]
        for m in request.messages:
            if m.image_png:
                b64 = base64.b64encode(m.image_png).decode()
                content = [
                    {"type": "text", "text": m.text},
                    {"type": "image_url",
                     "image_url": {"url": f"data:image/png;base64,{b64}"}},
                ]
            else:
                content = m.text
            messages.append({"role": m.role, "content": content})
        return {
            "model": self.cfg.model_for(request.role_config_id),
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "messages": messages,
        }

    def _complete(self, request: ChatRequest) -> ChatResponse:
        import requests

        payload = self._payload(request)
        headers = {"Authorization": f"Bearer {self.api_key}",
                   "Content-Type": "application/json"}
        last_error: Exception | None = None
        start = time.monotonic()
        for attempt in range(self.cfg.max_attempts):
            if attempt:
                time.sleep(min(2.0 ** attempt, 8.0))
            try:
                resp = requests.post(self.api_url, json=payload, headers=headers,
                                     timeout=self.cfg.request_timeout_s)
            except requests.Timeout as exc:
                last_error = LlmTimeoutError(str(exc))
                continue
            except requests.RequestException as exc:
                last_error = LlmError(str(exc))
                continue
            if resp.status_code in (401, 403):
                raise LlmAuthError(f"authentication failed: HTTP {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = LlmError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise LlmError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            body = resp.json()
            try:
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
            except (KeyError, IndexError, TypeError) as exc:
                raise LlmError(f"malformed completion response: {exc}") from exc
            latency = (time.monotonic() - start) * 1000.0
            return ChatResponse(
                text=text if isinstance(text, str) else json.dumps(text),
                usage=(int(usage.get("prompt_tokens", 0)),
                       int(usage.get("completion_tokens", 0))),
                latency_ms=latency,
            )
        raise LlmRetriesExhausted(
            f"gave up after {self.cfg.max_attempts} attempts: {last_error}")


@dataclass(frozen=True)
class TranscriptEntry:
    role_config_id: str
    response_text: str
    expect_substring: str | None = None


def parse_transcript(raw: list, source: str = "<data>") -> list[TranscriptEntry]:
    if not isinstance(raw, list):
        raise MockTranscriptError(f"{source}: transcript must be a JSON list")
    entries = []
    for i, item in enumerate(raw):
        if "role_config_id" not in item or "response_text" not in item:
            raise MockTranscriptError(
                f"{source}: entry {i} needs role_config_id and response_text")
        entries.append(TranscriptEntry(
            role_config_id=item["role_config_id"],
            response_text=item["response_text"],
            expect_substring=item.get("expect_substring"),
        ))
    return entries


def load_transcript(path) -> list[TranscriptEntry]:
    with open(path) as fh:
        raw = json.load(fh)
    return parse_transcript(raw, source=str(path))


class MockChatClient(ChatClient):
    """Replays a scripted transcript; zero network access.

    Each role consumes its own entries in transcript order; the k-th call for
    a role gets that role's k-th entry. Optional `expect_substring` asserts
    the request actually contains what the script assumed.
    """

    def __init__(self, transcript: list[TranscriptEntry],
                 cfg: LlmConfig = LlmConfig()):
        super().__init__(cfg)
        self._queues: dict[str, list[TranscriptEntry]] = {r: [] for r in ROLE_IDS}
        for entry in transcript:
            if entry.role_config_id not in self._queues:
                raise MockTranscriptError(
                    f"transcript entry has unknown role {entry.role_config_id!r}")
            self._queues[entry.role_config_id].append(entry)
        self._cursor = {r: 0 for r in ROLE_IDS}
        self._lock = threading.Lock()
        # Flat text of every request, in call order; lets tests assert on
        # request content (escalation blocks etc.) without live plumbing.
        self.seen_requests: list[str] = []

    @classmethod
    def from_file(cls, path, cfg: LlmConfig = LlmConfig()) -> "MockChatClient":
        return cls(load_transcript(path), cfg)

    def fast_forward(self, counts: dict[str, int]) -> None:
        """Skip entries already consumed by a previous (resumed) run."""
        for role, n in counts.items():
            if role in self._cursor:
                self._cursor[role] += n

    def _complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.seen_requests.append(request.flat_text())
            queue = self._queues[request.role_config_id]
            pos = self._cursor[request.role_config_id]
            if pos >= len(queue):
                raise MockTranscriptError(
                    f"transcript exhausted for role {request.role_config_id!r} "
                    f"(call #{pos + 1})")
            entry = queue[pos]
            self._cursor[request.role_config_id] = pos + 1
        if entry.expect_substring and entry.expect_substring not in request.flat_text():
            raise MockTranscriptError(
                f"transcript mismatch for role {request.role_config_id!r}: "
                f"expected request to contain {entry.expect_substring!r}")
        return ChatResponse(text=entry.response_text, usage=(0, 0), latency_ms=0.0)
