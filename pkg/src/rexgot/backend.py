"""Completion backends behind one interface.

Three implementations: an HTTP client speaking the de-facto
``/v1/chat/completions`` JSON protocol, a scripted backend for fully
offline deterministic tests, and a content-addressed record/replay
cache that wraps either. All backends accept concurrent ``complete``
calls. A conforming backend returns exactly ``n_samples`` completions
or raises; at temperature 0 all samples must be identical.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .model import RexGotError

log = logging.getLogger(__name__)

API_KEY_ENV = "REXGOT_API_KEY"


class BackendError(RexGotError):
    """Base class for completion-backend failures."""


class TransportError(BackendError):
    """Network-level failure or 5xx; retryable."""


class AuthError(BackendError):
    """Credential rejected; never retried."""


class RateLimited(BackendError):
    """Server asked us to back off; retryable after a delay."""

    def __init__(self, message: str, after: float = 1.0):
        super().__init__(message)
        self.after = after


class ProtocolError(BackendError):
    """Response body did not match the expected shape; never retried."""


class ScriptMiss(BackendError):
    """No registered script matched the prompt."""


class DuplicateScript(BackendError):
    """A script was already registered for this matcher."""


class ReplayMiss(BackendError):
    """Replay cache has no entry for the request."""


@dataclass(frozen=True)
class CompletionRequest:
    """One decoding request; ``n_samples`` asks for that many sampled paths."""

    prompt: str
    n_samples: int = 1
    temperature: float = 0.0
    max_tokens: int = 512
    model_name: str = ""
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    usage: Mapping[str, int] | None = None


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> list[Completion]: ...


def _canonical_request(request: CompletionRequest) -> bytes:
    payload = {
        "prompt": request.prompt,
        "n_samples": request.n_samples,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "model_name": request.model_name,
        "stop_sequences": list(request.stop_sequences),
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":")).encode(
        "ascii"
    )


def cache_key(request: CompletionRequest) -> str:
    """Deterministic content digest over all request fields."""
    return hashlib.sha256(_canonical_request(request)).hexdigest()


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Offline backend returning pre-registered responses.

    Scripts are keyed by the exact prompt string or by its digest.
    Responses cycle to fill ``n_samples``; at temperature 0 the first
    response is repeated instead, as conformance requires.
    """

    def __init__(self, default_responses: Sequence[str] | None = None):
        self._by_digest: dict[str, tuple[str, ...]] = {}
        self._sources: dict[str, str] = {}
        self._default = tuple(default_responses) if default_responses else None

    def register_script(
        self,
        responses: Sequence[str],
        prompt: str | None = None,
        digest: str | None = None,
    ) -> None:
        if (prompt is None) == (digest is None):
            raise ValueError("register exactly one of prompt= or digest=")
        if not responses:
            raise ValueError("responses must be non-empty")
        key = digest if digest is not None else prompt_digest(prompt)  # type: ignore[arg-type]
        if key in self._by_digest:
            raise DuplicateScript(f"script already registered for digest {key[:12]}…")
        self._by_digest[key] = tuple(responses)
        self._sources[key] = prompt if prompt is not None else key

    def complete(self, request: CompletionRequest) -> list[Completion]:
        key = prompt_digest(request.prompt)
        responses = self._by_digest.get(key)
        if responses is None:
            responses = self._default
        if responses is None:
            raise ScriptMiss(
                f"no script for prompt digest {key[:12]}…; "
                f"nearest registered: {self._nearest(request.prompt) or 'none'}"
            )
        if request.temperature == 0:
            texts = [responses[0]] * request.n_samples
        else:
            texts = [responses[i % len(responses)] for i in range(request.n_samples)]
        return [Completion(text=t) for t in texts]

    def _nearest(self, prompt: str) -> str | None:
        best_key, best_score = None, -1.0
        for key, source in sorted(self._sources.items()):
            score = difflib.SequenceMatcher(None, prompt, source).ratio()
            if score > best_score:
                best_key, best_score = key, score
        return best_key


Transport = Callable[..., tuple[int, Mapping[str, str], str]]


def _requests_transport(
    url: str, body: dict[str, Any], headers: Mapping[str, str], timeout: float
) -> tuple[int, Mapping[str, str], str]:
    import requests

    try:
        response = requests.post(url, json=body, headers=dict(headers), timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"POST {url} failed: {exc}") from exc
    return response.status_code, response.headers, response.text


class HTTPBackend:
    """Client for OpenAI-compatible chat-completions endpoints.

    The API key is read from the ``REXGOT_API_KEY`` environment variable
    (never from the command line). Transient failures retry up to
    ``max_retries`` times with exponential backoff; auth and protocol
    errors never retry.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = API_KEY_ENV,
        timeout: float = 120.0,
        max_retries: int = 3,
        transport: Transport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "")
        self.timeout = timeout
        self.max_retries = max_retries
        self._transport = transport or _requests_transport
        self._sleep = sleeper

    def complete(self, request: CompletionRequest) -> list[Completion]:
        url = f"{self.base_url}/v1/chat/completions"
        body: dict[str, Any] = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "n": request.n_samples,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        attempt = 0
        while True:
            try:
                status, resp_headers, text = self._transport(url, body, headers, self.timeout)
                return self._parse_response(status, resp_headers, text, request.n_samples)
            except (TransportError, RateLimited) as exc:
                if attempt >= self.max_retries:
                    raise
                delay = 2.0**attempt
                if isinstance(exc, RateLimited):
                    delay = max(delay, exc.after)
                log.warning("retrying after %s (attempt %d): %s", delay, attempt + 1, exc)
                self._sleep(delay)
                attempt += 1

    @staticmethod
    def _parse_response(
        status: int, headers: Mapping[str, str], text: str, n_samples: int
    ) -> list[Completion]:
        if status in (401, 403):
            raise AuthError(f"credential rejected (HTTP {status})")
        if status == 429:
            after = 1.0
            retry_after = headers.get("Retry-After") or headers.get("retry-after")
            if retry_after:
                try:
                    after = float(retry_after)
                except ValueError:
                    pass
            raise RateLimited(f"rate limited (HTTP {status})", after=after)
        if status >= 500:
            raise TransportError(f"server error (HTTP {status})")
        if status != 200:
            raise ProtocolError(f"HTTP {status}: {text[:200]}")
        try:
            payload = json.loads(text)
            choices = payload["choices"]
            completions = []
            for choice in choices:
                reason = choice.get("finish_reason", "stop")
                try:
                    finish = FinishReason(reason)
                except ValueError:
                    finish = FinishReason.ERROR
                completions.append(
                    Completion(
                        text=choice["message"]["content"],
                        finish_reason=finish,
                        usage=payload.get("usage"),
                    )
                )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"unexpected response shape: {text[:200]}") from exc
        if len(completions) != n_samples:
            raise ProtocolError(
                f"asked for {n_samples} samples, got {len(completions)}"
            )
        return completions


CACHE_OFF = "off"
CACHE_RECORD = "record"
CACHE_REPLAY = "replay"
CACHE_MODES = (CACHE_OFF, CACHE_RECORD, CACHE_REPLAY)


class CachingBackend:
    """Content-addressed file cache around another backend.

    Layout: ``<cache_dir>/<2-char shard>/<digest>.json``, one diffable
    JSON file per request digest holding the full completion list.
    ``record`` reads through and stores misses; ``replay`` serves hits
    only and never touches the inner backend, so replayed runs are fully
    offline. Writes are serialized and atomic; concurrent readers are
    safe.
    """

    def __init__(self, inner: Backend | None, cache_dir: str | Path, mode: str = CACHE_RECORD):
        if mode not in (CACHE_RECORD, CACHE_REPLAY):
            raise ValueError(f"cache mode must be record or replay, got {mode!r}")
        if mode == CACHE_RECORD and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.mode = mode
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def complete(self, request: CompletionRequest) -> list[Completion]:
        digest = cache_key(request)
        path = self._path(digest)
        if path.exists():
            return self._load(path)
        if self.mode == CACHE_REPLAY:
            raise ReplayMiss(f"no cached completion for digest {digest}")
        assert self.inner is not None
        completions = self.inner.complete(request)
        self._store(path, request, completions)
        return completions

    @staticmethod
    def _load(path: Path) -> list[Completion]:
        payload = json.loads(path.read_text("utf-8"))
        return [
            Completion(
                text=c["text"],
                finish_reason=FinishReason(c["finish_reason"]),
                usage=c.get("usage"),
            )
            for c in payload["completions"]
        ]

    def _store(
        self, path: Path, request: CompletionRequest, completions: Sequence[Completion]
    ) -> None:
        payload = {
            "request": json.loads(_canonical_request(request).decode("ascii")),
            "completions": [
                {
                    "text": c.text,
                    "finish_reason": c.finish_reason.value,
                    "usage": dict(c.usage) if c.usage is not None else None,
                }
                for c in completions
            ],
        }
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")
            os.replace(tmp, path)


def purge_cache(cache_dir: str | Path) -> int:
    """Delete all cached completion files; returns the number removed."""
    cache_dir = Path(cache_dir)
    removed = 0
    if not cache_dir.exists():
        return 0
    for shard in sorted(cache_dir.iterdir()):
        if not shard.is_dir():
            continue
        for entry in sorted(shard.glob("*.json")):
            entry.unlink()
            removed += 1
        try:
            shard.rmdir()
        except OSError:
            pass
    return removed
