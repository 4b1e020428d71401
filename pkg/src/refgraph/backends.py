"""Chat-model backends: HTTP chat-completion transport, deterministic mocks, response cache.

Every call site talks to the same small surface — ``chat(prompt, images,
params)`` returning the response text — whether the other end is a live
vision/language endpoint, a scripted mock, or the on-disk cache in front of
either.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx

__all__ = [
    "SamplingParams",
    "BackendConfig",
    "ChatExchange",
    "ChatBackend",
    "HttpChatBackend",
    "MockChatBackend",
    "mock_backend",
    "BackendError",
    "NoScriptError",
    "CacheError",
    "CacheStore",
    "CacheStats",
    "CachedChat",
    "cached_chat",
    "exchange_key",
    "image_digest",
]

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    """Transport failure, bad configuration, or an unusable response."""


class NoScriptError(BackendError):
    """A mock backend had no scripted response and no default."""


class CacheError(RuntimeError):
    """The response store is unreadable; distinct from backend failures."""


@dataclass(frozen=True)
class SamplingParams:
    """Decoding parameters sent with every request."""

    temperature: float = 0.7
    top_p: float = 0.8
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")
        if not (0 < self.top_p <= 1):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class BackendConfig:
    """How to reach one chat endpoint."""

    endpoint: str
    model: str
    credential_env: str | None = None
    timeout_s: float = 60.0
    retries: int = 2
    vision: bool = False
    concurrency: int = 4
    backoff_base_s: float = 0.5

    def __post_init__(self) -> None:
        if self.retries < 0:
            raise ValueError(f"retries must be >= 0, got {self.retries}")
        if self.timeout_s <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout_s}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")


def image_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def exchange_key(model: str, prompt: str, image_digests: Sequence[str], params: SamplingParams) -> str:
    """Content hash identifying one request; equal keys mean semantically identical requests."""
    canonical = json.dumps(
        {
            "model": model,
            "prompt": prompt,
            "images": list(image_digests),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ChatExchange:
    """One request/response pair, as persisted in the cache."""

    key: str
    model: str
    prompt: str
    image_digests: tuple[str, ...]
    params: SamplingParams
    response: str
    timestamp: float = 0.0
    latency_s: float = 0.0

    def to_record(self) -> dict:
        return {
            "key": self.key,
            "model": self.model,
            "prompt": self.prompt,
            "image_digests": list(self.image_digests),
            "params": {
                "temperature": self.params.temperature,
                "top_p": self.params.top_p,
                "max_tokens": self.params.max_tokens,
            },
            "response": self.response,
            "timestamp": self.timestamp,
            "latency_s": self.latency_s,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "ChatExchange":
        params = record["params"]
        return cls(
            key=record["key"],
            model=record["model"],
            prompt=record["prompt"],
            image_digests=tuple(record["image_digests"]),
            params=SamplingParams(
                temperature=params["temperature"],
                top_p=params["top_p"],
                max_tokens=params["max_tokens"],
            ),
            response=record["response"],
            timestamp=record.get("timestamp", 0.0),
            latency_s=record.get("latency_s", 0.0),
        )


class ChatBackend:
    """Minimal chat surface; subclasses provide transport."""

    model_id: str = ""
    vision: bool = False

    def chat(
        self,
        prompt: str,
        images: Sequence[bytes] | None = None,
        params: SamplingParams | None = None,
    ) -> str:
        raise NotImplementedError


class HttpChatBackend(ChatBackend):
    """Chat-completion endpoint speaking the common HTTP POST shape.

    Request body: {model, messages:[{role, content}], temperature, top_p,
    max_tokens}; image payloads ride inline as base64 data URLs; the reply
    text is the first choice's message content. Transient failures (429/5xx
    and transport errors) are retried with exponential backoff.
    """

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.model_id = config.model
        self.vision = config.vision
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)
        self._slots = threading.Semaphore(config.concurrency)

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.credential_env:
            token = os.environ.get(self.config.credential_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _body(self, prompt: str, images: Sequence[bytes], params: SamplingParams) -> dict:
        if images:
            content: object = [{"type": "text", "text": prompt}] + [
                {
                    "type": "image_url",
                    "image_url": {"url": "data:image/png;base64," + base64.b64encode(img).decode("ascii")},
                }
                for img in images
            ]
        else:
            content = prompt
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }

    def chat(
        self,
        prompt: str,
        images: Sequence[bytes] | None = None,
        params: SamplingParams | None = None,
    ) -> str:
        images = list(images or [])
        params = params or SamplingParams()
        if images and not self.vision:
            raise BackendError(f"backend {self.model_id!r} is not vision-capable but got {len(images)} image(s)")
        body = self._body(prompt, images, params)
        attempts = self.config.retries + 1
        last_error = ""
        for attempt in range(1, attempts + 1):
            try:
                with self._slots:
                    response = self._client.post(self.config.endpoint, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    return self._extract_text(response)
                if response.status_code not in RETRYABLE_STATUS:
                    raise BackendError(
                        f"{self.model_id}: non-retryable HTTP {response.status_code}: {response.text[:200]}"
                    )
                last_error = f"HTTP {response.status_code}"
            log.warning("%s: attempt %d/%d failed (%s)", self.model_id, attempt, attempts, last_error)
            if attempt < attempts:
                time.sleep(min(self.config.backoff_base_s * 2 ** (attempt - 1), 30.0))
        raise BackendError(f"{self.model_id}: giving up after {attempts} attempts ({last_error})")

    def _extract_text(self, response: httpx.Response) -> str:
        try:
            payload = response.json()
            message = payload["choices"][0]["message"]
            content = message["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendError(f"{self.model_id}: malformed chat response: {exc}") from exc
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        if not isinstance(content, str):
            raise BackendError(f"{self.model_id}: response content has type {type(content).__name__}")
        return content


class MockChatBackend(ChatBackend):
    """Scripted backend for tests and golden runs; matches prompts by regex.

    Patterns are tried in insertion order and searched with DOTALL so they
    can span the multi-line prompts. A response may be a list, consumed one
    element per matching call (the last element repeats). Images are ignored
    but still accepted, mirroring a vision endpoint.
    """

    def __init__(
        self,
        script: Mapping[str, str | Sequence[str]] | Sequence[tuple[str, str | Sequence[str]]] | None = None,
        default: str | None = None,
        model: str = "mock",
    ):
        items = list(script.items()) if isinstance(script, Mapping) else list(script or [])
        self._rules: list[tuple[re.Pattern[str], list[str]]] = []
        for pattern, response in items:
            responses = [response] if isinstance(response, str) else list(response)
            if not responses:
                raise ValueError(f"empty response list for pattern {pattern!r}")
            self._rules.append((re.compile(pattern, re.DOTALL), responses))
        self._default = default
        self._positions = [0] * len(self._rules)
        self._lock = threading.Lock()
        self.model_id = model
        self.vision = True
        self.call_count = 0
        self.prompts: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path, model: str = "mock") -> "MockChatBackend":
        """Load {"rules": [{"pattern", "response"|"responses"}], "default"?} from JSON."""
        with Path(path).open("r", encoding="utf-8") as fh:
            spec = json.load(fh)
        rules = []
        for rule in spec.get("rules", []):
            response = rule["responses"] if "responses" in rule else rule["response"]
            rules.append((rule["pattern"], response))
        return cls(rules, default=spec.get("default"), model=model)

    def chat(
        self,
        prompt: str,
        images: Sequence[bytes] | None = None,
        params: SamplingParams | None = None,
    ) -> str:
        with self._lock:
            self.call_count += 1
            self.prompts.append(prompt)
            for i, (pattern, responses) in enumerate(self._rules):
                if pattern.search(prompt):
                    position = min(self._positions[i], len(responses) - 1)
                    self._positions[i] += 1
                    return responses[position]
            if self._default is not None:
                return self._default
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        raise NoScriptError(f"no scripted response for prompt {digest} ({prompt[:80]!r}...)")


def mock_backend(script: Mapping[str, str | Sequence[str]], default: str | None = None) -> MockChatBackend:
    """Build a scripted backend answering by first matching pattern, else default."""
    return MockChatBackend(script, default=default)


@dataclass(frozen=True)
class CacheStats:
    entries: int
    total_bytes: int


class CacheStore:
    """Content-addressed on-disk store of chat exchanges.

    Layout: <root>/<first 2 hex of key>/<key>.json. Writes go through a
    temp-file rename so concurrent readers never see partial records;
    identical keys carry identical values under deterministic backends, so
    last-writer-wins is harmless.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> ChatExchange | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with path.open("r", encoding="utf-8") as fh:
                return ChatExchange.from_record(json.load(fh))
        except (ValueError, KeyError, TypeError) as exc:
            raise CacheError(f"corrupt cache record {path}: {exc}") from exc

    def put(self, exchange: ChatExchange) -> None:
        path = self._path(exchange.key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(exchange.to_record(), fh, ensure_ascii=False)
        os.replace(tmp, path)

    def stats(self) -> CacheStats:
        entries = 0
        total = 0
        if self.root.is_dir():
            for path in self.root.glob("*/*.json"):
                entries += 1
                total += path.stat().st_size
        return CacheStats(entries=entries, total_bytes=total)

    def purge(self) -> int:
        """Delete all records; a missing directory is a successful no-op."""
        removed = 0
        if not self.root.is_dir():
            return 0
        for path in self.root.glob("*/*.json"):
            path.unlink(missing_ok=True)
            removed += 1
        for sub in self.root.iterdir():
            if sub.is_dir() and not any(sub.iterdir()):
                sub.rmdir()
        return removed


class CachedChat:
    """Cache-fronted view of a backend, with hit/miss counters and key tracking."""

    def __init__(self, store: CacheStore, backend: ChatBackend):
        self.store = store
        self.backend = backend
        self.hits = 0
        self.misses = 0
        self.keys_used: list[str] = []

    def chat(
        self,
        prompt: str,
        images: Sequence[bytes] | None = None,
        params: SamplingParams | None = None,
    ) -> str:
        images = list(images or [])
        params = params or SamplingParams()
        digests = tuple(image_digest(img) for img in images)
        key = exchange_key(self.backend.model_id, prompt, digests, params)
        self.keys_used.append(key)
        cached = self.store.get(key)
        if cached is not None:
            self.hits += 1
            return cached.response
        self.misses += 1
        started = time.monotonic()
        response = self.backend.chat(prompt, images=images, params=params)
        self.store.put(
            ChatExchange(
                key=key,
                model=self.backend.model_id,
                prompt=prompt,
                image_digests=digests,
                params=params,
                response=response,
                timestamp=time.time(),
                latency_s=time.monotonic() - started,
            )
        )
        return response


def cached_chat(
    store: CacheStore,
    backend: ChatBackend,
    prompt: str,
    images: Sequence[bytes] | None = None,
    params: SamplingParams | None = None,
) -> str:
    """One cache-fronted call: hit returns the stored text, miss delegates and persists."""
    return CachedChat(store, backend).chat(prompt, images=images, params=params)
