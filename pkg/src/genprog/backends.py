"""Generation backends: an OpenAI-compatible chat client with a
content-addressed response cache, plus a scripted backend for tests.

Cache entries are keyed by SHA-256 over (backend id, model, prompt,
temperature, sample index), so distinct samples at the same temperature
cache independently and replay runs can satisfy every request offline.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "GENPROG_API_KEY"
DEFAULT_MAX_TOKENS = 512
DEFAULT_MAX_INFLIGHT = 8


class BackendError(RuntimeError):
    """Transport or HTTP failure after retries."""


class EmptyCompletion(BackendError):
    """The backend returned no usable text."""


class CacheMiss(BackendError):
    """Offline replay hit a request with no cached response."""

    def __init__(self, key: str):
        super().__init__(f"no cached response for key {key}")
        self.key = key


@dataclass(frozen=True)
class Completion:
    text: str
    cached: bool


class ChatBackend(Protocol):
    id: str

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        sample_index: int = 0,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> Completion: ...


def cache_key(backend_id: str, model: str, prompt: str, temperature: float, sample_index: int) -> str:
    payload = json.dumps(
        [backend_id, model, prompt, temperature, sample_index], ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _atomic_write(path: Path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ResponseCache:
    """One JSON file per response under cache_dir, named by content key."""

    def __init__(self, cache_dir: str | Path):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> str | None:
        path = self.dir / f"{key}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["completion"]

    def put(self, key: str, prompt: str, completion: str) -> None:
        record = {"key": key, "prompt": prompt, "completion": completion}
        _atomic_write(self.dir / f"{key}.json", json.dumps(record, ensure_ascii=False))


class OpenAIChatBackend:
    """Client for any chat-completions endpoint speaking the OpenAI wire format.

    offline=True serves exclusively from cache and raises CacheMiss on a
    gap; it never writes to the cache.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        cache_dir: str | Path | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        offline: bool = False,
        transport: httpx.BaseTransport | None = None,
    ):
        self.id = "openai-chat"
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.retries = retries
        self.offline = offline
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._semaphore = threading.Semaphore(max_inflight)
        self._lock = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        sample_index: int = 0,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> Completion:
        key = cache_key(self.id, self.model, prompt, temperature, sample_index)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return Completion(text=cached, cached=True)
        if self.offline:
            raise CacheMiss(key)
        text = self._request(prompt, temperature, max_tokens)
        if self.cache is not None:
            self.cache.put(key, prompt, text)
        return Completion(text=text, cached=False)

    def _request(self, prompt: str, temperature: float, max_tokens: int) -> str:
        api_key = os.environ.get(self.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._semaphore:
                    with self._lock:
                        self.network_calls += 1
                    response = self._client.post(
                        f"{self.base_url}/chat/completions", headers=headers, json=body
                    )
                if response.status_code in (429,) or response.status_code >= 500:
                    raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
                response.raise_for_status()
                payload = response.json()
                content = payload["choices"][0]["message"]["content"]
                if not isinstance(content, str) or not content.strip():
                    raise EmptyCompletion("backend returned empty completion")
                return content
            except EmptyCompletion:
                raise
            except (httpx.HTTPError, BackendError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    delay = 2**attempt
                    logger.warning("backend call failed (%s), retrying in %ss", exc, delay)
                    time.sleep(delay)
        raise BackendError(f"backend failed after {self.retries} attempts: {last_error}")


class ScriptedChatBackend:
    """Test backend returning canned completions.

    Responses may be a single string (returned for every call), a list
    (consumed in order), or a dict keyed by exact prompt.
    """

    def __init__(self, responses: str | list[str] | dict[str, str]):
        self.id = "scripted"
        self.model = "scripted"
        self._responses = responses
        self._cursor = 0
        self.calls: list[tuple[str, float, int]] = []

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        sample_index: int = 0,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> Completion:
        self.calls.append((prompt, temperature, sample_index))
        if isinstance(self._responses, str):
            text = self._responses
        elif isinstance(self._responses, dict):
            if prompt not in self._responses:
                raise BackendError("no scripted response for prompt")
            text = self._responses[prompt]
        else:
            if self._cursor >= len(self._responses):
                raise BackendError("scripted responses exhausted")
            text = self._responses[self._cursor]
            self._cursor += 1
        if not text.strip():
            raise EmptyCompletion("scripted completion empty")
        return Completion(text=text, cached=False)
