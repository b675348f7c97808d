import json

import numpy as np
import pytest

from vlm3d.errors import (ConfigError, OfflineMissError, RateLimitedError,
                          TransportError)
from vlm3d.gateway import (BACKOFF_BASE, BACKOFF_FACTOR, MAX_TRIES,
                           CannedTranscript, ChatClient, ChatRequest,
                           offline_client)


class TestChatRequest:
    def test_empty_user_rejected(self):
        with pytest.raises(ConfigError):
            ChatRequest(system="s", user="")

    def test_fingerprint_stable_across_runs(self):
        a = ChatRequest(system="sys", user="hello", temperature=0.0, max_tokens=10)
        b = ChatRequest(system="sys", user="hello", temperature=0.0, max_tokens=10)
        assert a.fingerprint() == b.fingerprint()
        assert len(a.fingerprint()) == 64

    def test_fingerprint_normalizes_whitespace(self):
        a = ChatRequest(system="sys", user="hello ")
        b = ChatRequest(system="sys", user="hello")
        assert a.fingerprint() == b.fingerprint()

    def test_fingerprint_differs_by_content(self):
        a = ChatRequest(system="", user="hello")
        b = ChatRequest(system="", user="goodbye")
        assert a.fingerprint() != b.fingerprint()


class TestOffline:
    def test_hit_returns_recorded_verbatim(self):
        req = ChatRequest(system="", user="q1")
        tr = CannedTranscript()
        tr.add(req, "the recorded answer")
        client = ChatClient(offline=tr)
        assert client.complete(req) == "the recorded answer"
        assert client.network_calls == 0

    def test_miss_raises(self):
        client = ChatClient(offline=CannedTranscript())
        with pytest.raises(OfflineMissError):
            client.complete(ChatRequest(system="", user="unseen"))

    def test_transcript_roundtrip(self, tmp_path):
        tr = CannedTranscript()
        req = ChatRequest(system="s", user="u")
        tr.add(req, "resp with\nnewline")
        path = tmp_path / "t.jsonl"
        tr.save(path)
        back = CannedTranscript.load(path)
        assert back.lookup(req) == "resp with\nnewline"
        line = path.read_text().splitlines()[0]
        row = json.loads(line)
        assert set(row) == {"fingerprint", "response"}

    def test_offline_client_from_path(self, tmp_path):
        tr = CannedTranscript()
        req = ChatRequest(system="", user="x")
        tr.add(req, "y")
        path = tmp_path / "t.jsonl"
        tr.save(path)
        client = offline_client(str(path))
        assert client.complete(req) == "y"


class TestRetries:
    def _flaky_client(self, failures, exc=TransportError):
        sleeps = []
        state = {"left": failures}

        def transport(url, body, headers):
            if state["left"] > 0:
                state["left"] -= 1
                raise exc("simulated outage")
            return "ok"

        client = ChatClient(endpoint="http://example.invalid/chat",
                            transport=transport, sleeper=sleeps.append)
        return client, sleeps

    def test_two_failures_then_success(self):
        client, sleeps = self._flaky_client(2)
        out = client.complete(ChatRequest(system="", user="q"))
        assert out == "ok"
        assert sleeps == [1.0, 2.0]  # ~3 s total backoff
        assert client.network_calls == 3

    def test_exhausted_retries_raise_last_error(self):
        client, sleeps = self._flaky_client(99, exc=RateLimitedError)
        with pytest.raises(RateLimitedError):
            client.complete(ChatRequest(system="", user="q"))
        assert client.network_calls == MAX_TRIES
        assert sleeps == [BACKOFF_BASE * BACKOFF_FACTOR ** i for i in range(MAX_TRIES - 1)]

    def test_no_endpoint_no_offline(self):
        client = ChatClient()
        with pytest.raises(ConfigError):
            client.complete(ChatRequest(system="", user="q"))


class TestEnvConfig:
    def test_from_env_requires_something(self, monkeypatch):
        for var in ("M3D_LLM_ENDPOINT", "M3D_LLM_MODEL", "M3D_LLM_KEY", "M3D_LLM_OFFLINE"):
            monkeypatch.delenv(var, raising=False)
        with pytest.raises(ConfigError):
            ChatClient.from_env()

    def test_from_env_offline(self, monkeypatch, tmp_path):
        tr = CannedTranscript()
        req = ChatRequest(system="", user="env test")
        tr.add(req, "env response")
        path = tmp_path / "env.jsonl"
        tr.save(path)
        monkeypatch.delenv("M3D_LLM_ENDPOINT", raising=False)
        monkeypatch.setenv("M3D_LLM_OFFLINE", str(path))
        client = ChatClient.from_env()
        assert client.complete(req) == "env response"
