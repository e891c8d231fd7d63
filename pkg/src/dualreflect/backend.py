"""Chat-completion backends behind one interface.

Three implementations: a live OpenAI-compatible HTTP client with bounded
retry, a deterministic scripted playback double, and record/replay wrappers
that capture or serve a JSON-Lines trace of (request, response) pairs.
Token accounting is exact on every backend — counts come from the upstream
``usage`` block or from the script itself, never from estimation.

This is the only module in the package that performs network I/O.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

import requests

__all__ = [
    "BackendError",
    "TransportError",
    "ApiError",
    "ScriptExhausted",
    "ReplayMismatch",
    "ChatRequest",
    "ChatResponse",
    "TokenTotals",
    "ChatBackend",
    "ScriptStep",
    "ScriptedBackend",
    "HttpBackend",
    "RecordingBackend",
    "ReplayBackend",
    "canonical_request",
    "script_from_jsonl",
    "load_script",
    "read_record_trace",
    "fold_record_trace",
]

API_BASE_ENV = "MIRROR_API_BASE"
API_KEY_ENV = "MIRROR_API_KEY"


class BackendError(Exception):
    """Base for everything a backend can fail with."""


class TransportError(BackendError):
    """Retryable delivery failure that survived every retry attempt."""


class ApiError(BackendError):
    """Upstream refused the request; carries the HTTP status."""

    def __init__(self, status: int, message: str):
        super().__init__(f"HTTP {status}: {message}")
        self.status = status


class ScriptExhausted(BackendError):
    """The scripted backend was called more times than it has steps."""


class ReplayMismatch(BackendError):
    """A replayed request diverged from the recorded one."""

    def __init__(self, offset: int, message: str):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class ChatRequest:
    """One system+user prompt pair bound for a chat-completion endpoint."""

    system: str
    user: str
    model: str = "scripted"
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.system or not self.user:
            raise ValueError("system and user prompts must be non-empty")


@dataclass(frozen=True)
class ChatResponse:
    """Raw completion text plus the exact token counts reported for it."""

    text: str
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class TokenTotals:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0


def _request_to_dict(request: ChatRequest) -> dict[str, Any]:
    return {
        "system": request.system,
        "user": request.user,
        "model": request.model,
        "temperature": request.temperature,
    }


def _request_from_dict(data: dict[str, Any]) -> ChatRequest:
    return ChatRequest(
        system=data["system"],
        user=data["user"],
        model=data.get("model", "scripted"),
        temperature=data.get("temperature", 0.0),
    )


def _response_to_dict(response: ChatResponse) -> dict[str, Any]:
    return {
        "text": response.text,
        "prompt_tokens": response.prompt_tokens,
        "completion_tokens": response.completion_tokens,
    }


def _response_from_dict(data: dict[str, Any]) -> ChatResponse:
    return ChatResponse(
        text=data["text"],
        prompt_tokens=int(data["prompt_tokens"]),
        completion_tokens=int(data["completion_tokens"]),
    )


def canonical_request(request: ChatRequest) -> str:
    """Stable JSON form used for replay comparison, byte for byte."""
    return json.dumps(_request_to_dict(request), sort_keys=True, ensure_ascii=False)


class ChatBackend:
    """Uniform completion interface with exact, thread-safe token counters."""

    model = "scripted"

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._totals = TokenTotals()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._complete(request)
        with self._lock:
            t = self._totals
            self._totals = TokenTotals(
                t.prompt_tokens + response.prompt_tokens,
                t.completion_tokens + response.completion_tokens,
                t.calls + 1,
            )
        return response

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def token_totals(self) -> TokenTotals:
        with self._lock:
            return self._totals

    def reset_totals(self) -> None:
        with self._lock:
            self._totals = TokenTotals()


@dataclass(frozen=True)
class ScriptStep:
    """One pre-authored completion; the hint documents what it answers."""

    response: ChatResponse
    hint: str = ""


class ScriptedBackend(ChatBackend):
    """Serves pre-authored responses strictly in order.

    Steps match by position, not content — order-matching plus trace
    assertions is stricter than brittle content matching. Single consumer by
    contract: give each concurrent run its own instance.
    """

    def __init__(self, steps: Iterable[ScriptStep]):
        super().__init__()
        self._steps = tuple(steps)
        self._cursor = 0
        #: Every request seen, in order; tests assert on prompt content here.
        self.requests: list[ChatRequest] = []

    def _complete(self, request: ChatRequest) -> ChatResponse:
        if self._cursor >= len(self._steps):
            raise ScriptExhausted(f"script exhausted after {len(self._steps)} steps")
        step = self._steps[self._cursor]
        self._cursor += 1
        self.requests.append(request)
        return step.response

    @property
    def remaining(self) -> int:
        return len(self._steps) - self._cursor


def script_from_jsonl(text: str) -> list[ScriptStep]:
    """Parse a script file: one step per line with declared token counts."""
    steps = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            steps.append(
                ScriptStep(
                    response=ChatResponse(
                        text=data["text"],
                        prompt_tokens=int(data["prompt_tokens"]),
                        completion_tokens=int(data["completion_tokens"]),
                    ),
                    hint=data.get("hint", ""),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad script line {i + 1}: {exc}") from None
    return steps


def load_script(path: Path | str) -> ScriptedBackend:
    return ScriptedBackend(script_from_jsonl(Path(path).read_text(encoding="utf-8")))


class HttpBackend(ChatBackend):
    """OpenAI-compatible chat-completions client.

    POSTs ``{base_url}/chat/completions`` and reads the first choice plus the
    usage block. Transport failures, 429, and 5xx are retried with capped
    exponential backoff for ``max_attempts`` total tries; other statuses
    raise :class:`ApiError` immediately. Base URL and key default to the
    MIRROR_API_BASE / MIRROR_API_KEY environment variables.
    """

    RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str = "default",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        super().__init__()
        base = base_url or os.environ.get(API_BASE_ENV)
        if not base:
            raise ValueError(f"no base URL: pass base_url or set {API_BASE_ENV}")
        self._url = base.rstrip("/") + "/chat/completions"
        self._api_key = api_key or os.environ.get(API_KEY_ENV)
        self.model = model
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._backoff_cap = backoff_cap
        self._sleep = sleep
        self._session = session or requests.Session()

    def _complete(self, request: ChatRequest) -> ChatResponse:
        body = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        }
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_failure = "no attempt made"
        for attempt in range(1, self._max_attempts + 1):
            try:
                resp = self._session.post(self._url, json=body, headers=headers, timeout=self._timeout)
            except requests.RequestException as exc:
                last_failure = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp)
                if resp.status_code not in self.RETRYABLE_STATUSES:
                    raise ApiError(resp.status_code, resp.text[:500])
                last_failure = f"HTTP {resp.status_code}"
            if attempt < self._max_attempts:
                self._sleep(min(self._backoff_cap, self._backoff_base * 2 ** (attempt - 1)))
        raise TransportError(f"giving up after {self._max_attempts} attempts: {last_failure}")

    def _parse(self, resp: requests.Response) -> ChatResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
            usage = data["usage"]
            return ChatResponse(
                text=text,
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
            )
        except (ValueError, KeyError, IndexError, TypeError):
            raise ApiError(200, "malformed completion payload") from None


class RecordingBackend(ChatBackend):
    """Pass-through wrapper appending each exchange to a JSON-Lines trace."""

    def __init__(self, inner: ChatBackend, path: Path | str):
        super().__init__()
        self._inner = inner
        self.model = inner.model
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.write_text("", encoding="utf-8")

    def _complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        line = json.dumps(
            {"request": _request_to_dict(request), "response": _response_to_dict(response)},
            sort_keys=True,
            ensure_ascii=False,
        )
        with self._path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return response


def read_record_trace(path: Path | str) -> list[tuple[ChatRequest, ChatResponse]]:
    """Load a recorded trace; raises at startup if the file is absent."""
    entries = []
    text = Path(path).read_text(encoding="utf-8")
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            entries.append((_request_from_dict(data["request"]), _response_from_dict(data["response"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad trace line {i + 1}: {exc}") from None
    return entries


def fold_record_trace(path: Path | str) -> TokenTotals:
    """Exact token totals recomputed from a trace file."""
    prompt = completion = calls = 0
    for _, response in read_record_trace(path):
        prompt += response.prompt_tokens
        completion += response.completion_tokens
        calls += 1
    return TokenTotals(prompt, completion, calls)


class ReplayBackend(ChatBackend):
    """Serves a recorded trace with zero network; any drift is an error.

    Each incoming request must match the recorded one byte-for-byte in
    canonical form, and the trace is loaded (and therefore validated) at
    construction, not on first call.
    """

    def __init__(self, path: Path | str):
        super().__init__()
        self._entries = read_record_trace(path)
        self._cursor = 0
        self.model = self._entries[0][0].model if self._entries else "replay"

    def _complete(self, request: ChatRequest) -> ChatResponse:
        if self._cursor >= len(self._entries):
            raise ReplayMismatch(0, f"trace exhausted: no recorded response for call {self._cursor + 1}")
        expected_request, response = self._entries[self._cursor]
        got = canonical_request(request).encode("utf-8")
        want = canonical_request(expected_request).encode("utf-8")
        if got != want:
            offset = _first_divergence(want, got)
            raise ReplayMismatch(
                offset,
                f"request {self._cursor + 1} diverged from the recording at byte {offset}: "
                f"recorded ...{_excerpt(want, offset)}... got ...{_excerpt(got, offset)}...",
            )
        self._cursor += 1
        return response


def _first_divergence(want: bytes, got: bytes) -> int:
    for i, (a, b) in enumerate(zip(want, got)):
        if a != b:
            return i
    return min(len(want), len(got))


def _excerpt(data: bytes, offset: int, width: int = 24) -> str:
    start = max(0, offset - width // 2)
    return data[start : start + width].decode("utf-8", errors="replace")
