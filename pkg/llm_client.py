"""
LLM backends behind one `complete(prompt)` call: chat-completions over HTTP,
a JSONL fixture store for record/replay, and a rule-based mock.
"""
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Pattern, Tuple

import httpx

from exceptions import FixtureMiss, LlmBackendError, MockUnmatched

BACKENDS = ("none", "http", "replay", "mock")


def normalize_text(text: str) -> str:
    """LF line endings, collapsed horizontal whitespace, stripped lines, single blank lines."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [re.sub(r"[ \t\f\v]+", " ", line).strip() for line in text.split("\n")]
    collapsed: List[str] = []
    for line in lines:
        if not line and (not collapsed or not collapsed[-1]):
            continue
        collapsed.append(line)
    while collapsed and not collapsed[-1]:
        collapsed.pop()
    return "\n".join(collapsed)


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str
    stage: str = field(default="", compare=False)

    @property
    def normalized(self) -> str:
        return json.dumps([normalize_text(self.system), normalize_text(self.user)], ensure_ascii=False)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.normalized.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    text: str
    backend: str
    latency: float = field(default=0.0, compare=False)
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None


class LlmBackend:
    name = "abstract"

    def complete(self, prompt: Prompt) -> LlmResponse:
        raise NotImplementedError

    def close(self):
        pass


class HttpBackend(LlmBackend):
    """
    Posts chat-completion requests (`model`, `messages`, `temperature`) and
    returns the first choice. At most `max_in_flight` requests run at once.
    """
    name = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        temperature: float = 0.0,
        max_in_flight: int = 4,
        timeout: float = 120.0,
        max_retries: int = 3,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_retries = max_retries
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, prompt: Prompt) -> LlmResponse:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.temperature,
        }
        with self._slots:
            started = time.perf_counter()
            response = self._post(payload)
            latency = time.perf_counter() - started
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise LlmBackendError(f"Malformed chat-completion response: {e}") from e
        usage = data.get("usage") or {}
        logging.info(f"LLM answered {prompt.stage or 'prompt'} {prompt.hash[:12]} in {latency:.2f}s")
        return LlmResponse(
            text=text,
            backend=self.name,
            latency=latency,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )

    def _post(self, payload: dict) -> httpx.Response:
        delay = 1.0
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(self.endpoint, json=payload, headers=self._headers())
            except httpx.HTTPError as e:
                if attempt < self.max_retries:
                    logging.warning(f"LLM request failed ({e}); retrying in {delay:.0f}s")
                    time.sleep(delay)
                    delay *= 2
                    continue
                raise LlmBackendError(f"LLM request failed: {e}") from e
            retryable = response.status_code == 429 or response.status_code >= 500
            if retryable and attempt < self.max_retries:
                logging.warning(f"LLM endpoint returned {response.status_code}; retrying in {delay:.0f}s")
                time.sleep(delay)
                delay *= 2
                continue
            if response.status_code != 200:
                raise LlmBackendError(f"LLM endpoint returned status {response.status_code}: {response.text[:200]}")
            return response
        raise LlmBackendError("LLM request retries exhausted")

    def close(self):
        self._client.close()


class FixtureStore:
    """
    JSONL records `{hash, system, user, response, backend, timestamp}` keyed
    by prompt hash. A later record for the same hash replaces the earlier one.
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self._entries: Dict[str, dict] = {}
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                for number, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError as e:
                        raise OSError(f"{path}:{number}: invalid fixture line: {e}") from e
                    self._entries[entry["hash"]] = entry
            logging.info(f"Loaded {len(self._entries)} LLM fixture(s) from {path}")

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, prompt_hash: str) -> bool:
        return prompt_hash in self._entries

    def hashes(self) -> List[str]:
        return sorted(self._entries)

    def get(self, prompt_hash: str) -> Optional[dict]:
        with self._lock:
            return self._entries.get(prompt_hash)

    def record(self, prompt: Prompt, response: LlmResponse):
        entry = {
            "hash": prompt.hash,
            "system": prompt.system,
            "user": prompt.user,
            "response": response.text,
            "backend": response.backend,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        with self._lock:
            if prompt.hash in self._entries:
                logging.warning(f"Fixture for prompt hash {prompt.hash} already recorded; overwriting")
            self._entries[prompt.hash] = entry
            directory = os.path.dirname(self.path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


def record(prompt: Prompt, response: LlmResponse, store: FixtureStore):
    store.record(prompt, response)


class ReplayBackend(LlmBackend):
    name = "replay"

    def __init__(self, store: FixtureStore):
        self.store = store

    def complete(self, prompt: Prompt) -> LlmResponse:
        entry = self.store.get(prompt.hash)
        if entry is None:
            logging.error(f"No fixture for {prompt.stage or 'prompt'} hash {prompt.hash}")
            raise FixtureMiss(prompt.hash)
        return LlmResponse(text=entry["response"], backend=self.name)


class RecordingBackend(LlmBackend):
    """Passes prompts to `inner` and appends every answer to the fixture store."""

    def __init__(self, inner: LlmBackend, store: FixtureStore):
        self.inner = inner
        self.store = store
        self.name = inner.name

    def complete(self, prompt: Prompt) -> LlmResponse:
        response = self.inner.complete(prompt)
        self.store.record(prompt, response)
        return response

    def close(self):
        self.inner.close()


class MockBackend(LlmBackend):
    """Answers with the response of the first rule whose regex matches the user text."""
    name = "mock"

    def __init__(self, rules: Optional[List[Tuple[str, str]]] = None):
        self.rules: List[Tuple[Pattern, str]] = []
        for pattern, response in rules or []:
            self.add_rule(pattern, response)

    def add_rule(self, pattern: str, response: str):
        self.rules.append((re.compile(pattern, re.DOTALL), response))

    @classmethod
    def from_file(cls, path: str) -> "MockBackend":
        with open(path, "r", encoding="utf-8") as f:
            entries = json.load(f)
        return cls([(entry["pattern"], entry["response"]) for entry in entries])

    def complete(self, prompt: Prompt) -> LlmResponse:
        for pattern, response in self.rules:
            if pattern.search(prompt.user):
                return LlmResponse(text=response, backend=self.name)
        excerpt = normalize_text(prompt.user)[:80]
        raise MockUnmatched(prompt.hash, excerpt)


def create_backend(
    kind: str,
    fixtures: Optional[str] = None,
    mock_rules: Optional[str] = None,
    endpoint: Optional[str] = None,
    model: Optional[str] = None,
    api_key: Optional[str] = None,
    temperature: float = 0.0,
    max_in_flight: int = 4,
    timeout: float = 120.0,
    record_fixtures: bool = False,
) -> Optional[LlmBackend]:
    """
    Builds the configured backend; 'none' gives None. With `record_fixtures`
    the http and mock backends write every answer to `fixtures`.
    """
    if kind == "none":
        return None
    if kind == "replay":
        if not fixtures:
            raise LlmBackendError("The replay backend needs a fixtures file")
        return ReplayBackend(FixtureStore(fixtures))
    if kind == "http":
        if not endpoint or not model:
            raise LlmBackendError("The http backend needs an endpoint and a model")
        backend: LlmBackend = HttpBackend(endpoint, model, api_key, temperature, max_in_flight, timeout)
    elif kind == "mock":
        backend = MockBackend.from_file(mock_rules) if mock_rules else MockBackend()
    else:
        raise LlmBackendError(f"Unknown LLM backend '{kind}'")
    if record_fixtures:
        if not fixtures:
            raise LlmBackendError("Recording needs a fixtures file")
        backend = RecordingBackend(backend, FixtureStore(fixtures))
    logging.info(f"Using LLM backend '{kind}'{' (recording)' if record_fixtures else ''}")
    return backend
