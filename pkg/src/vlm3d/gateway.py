"""Client for an external chat-completion service, with offline replay.

Online mode posts an OpenAI-style JSON body to the configured endpoint.
Offline mode replays a transcript of canned responses keyed by a stable
request fingerprint; CI runs entirely offline.

Environment variables:
    M3D_LLM_ENDPOINT   chat-completions URL
    M3D_LLM_MODEL      model name sent in the request body
    M3D_LLM_KEY        bearer token
    M3D_LLM_OFFLINE    path to a transcript (JSON lines of
                       {"fingerprint": ..., "response": ...})

Transient transport failures retry with exponential backoff: base 1s,
factor 2, at most 5 attempts.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, OfflineMissError, RateLimitedError, TransportError

BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
MAX_TRIES = 5
DEFAULT_MAX_IN_FLIGHT = 4


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.user:
            raise ConfigError("ChatRequest.user must be nonempty")

    def fingerprint(self) -> str:
        """Stable across runs: sha256 of the normalized request fields."""
        norm = json.dumps({
            "system": self.system.strip(),
            "user": self.user.strip(),
            "temperature": round(float(self.temperature), 6),
            "max_tokens": int(self.max_tokens),
        }, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(norm.encode("utf-8")).hexdigest()


class CannedTranscript:
    """Fingerprint -> response replay store (JSON lines on disk)."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})

    def add(self, req: ChatRequest, response: str):
        self.entries[req.fingerprint()] = response

    def lookup(self, req: ChatRequest) -> str:
        fp = req.fingerprint()
        if fp not in self.entries:
            raise OfflineMissError(f"no canned response for fingerprint {fp[:16]}...")
        return self.entries[fp]

    def save(self, path):
        lines = [json.dumps({"fingerprint": fp, "response": resp}, ensure_ascii=False)
                 for fp, resp in self.entries.items()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CannedTranscript":
        entries = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            entries[row["fingerprint"]] = row["response"]
        return cls(entries)

    def __len__(self):
        return len(self.entries)


class ChatClient:
    """Shareable chat client; an internal limiter caps in-flight requests.

    ``transport`` and ``sleeper`` are injectable for tests: transport takes
    (url, body_bytes, headers) and returns response text; sleeper replaces
    time.sleep.
    """

    def __init__(self, endpoint: str | None = None, model: str | None = None,
                 api_key: str | None = None, offline: CannedTranscript | None = None,
                 max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
                 transport=None, sleeper=time.sleep):
        self.endpoint = endpoint
        self.model = model or "default"
        self.api_key = api_key
        self.offline = offline
        self.transport = transport or self._http_transport
        self.sleeper = sleeper
        self._limiter = threading.Semaphore(max_in_flight)
        self.calls = 0
        self.network_calls = 0

    @classmethod
    def from_env(cls, offline_path: str | None = None) -> "ChatClient":
        offline_path = offline_path or os.environ.get("M3D_LLM_OFFLINE")
        offline = CannedTranscript.load(offline_path) if offline_path else None
        endpoint = os.environ.get("M3D_LLM_ENDPOINT")
        if offline is None and not endpoint:
            raise ConfigError("no M3D_LLM_ENDPOINT configured and no offline transcript given")
        return cls(endpoint=endpoint, model=os.environ.get("M3D_LLM_MODEL"),
                   api_key=os.environ.get("M3D_LLM_KEY"), offline=offline)

    def _http_transport(self, url: str, body: bytes, headers: dict) -> str:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=60) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            if e.code == 429:
                raise RateLimitedError(str(e)) from e
            raise TransportError(str(e)) from e
        except (urllib.error.URLError, TimeoutError, OSError) as e:
            raise TransportError(str(e)) from e
        return payload["choices"][0]["message"]["content"]

    def complete(self, req: ChatRequest) -> str:
        """Return the response text for a request (offline hit or HTTP)."""
        self.calls += 1
        if self.offline is not None:
            return self.offline.lookup(req)
        if not self.endpoint:
            raise ConfigError("client has neither an offline transcript nor an endpoint")
        body = json.dumps({
            "model": self.model,
            "messages": [{"role": "system", "content": req.system},
                         {"role": "user", "content": req.user}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = BACKOFF_BASE
        last: Exception | None = None
        with self._limiter:
            for attempt in range(MAX_TRIES):
                try:
                    self.network_calls += 1
                    return self.transport(self.endpoint, body, headers)
                except (TransportError, RateLimitedError) as e:
                    last = e
                    if attempt == MAX_TRIES - 1:
                        break
                    self.sleeper(delay)
                    delay *= BACKOFF_FACTOR
        raise last


def offline_client(transcript: CannedTranscript | str) -> ChatClient:
    if isinstance(transcript, (str, Path)):
        transcript = CannedTranscript.load(transcript)
    return ChatClient(offline=transcript)
