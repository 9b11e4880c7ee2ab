import json
import time

import httpx
import pytest

from src.rebact_harness.backends.base import CompletionRequest, EpisodeContext
from src.rebact_harness.backends.http_client import HttpBackend, extract_text
from src.rebact_harness.config import BackendConfig
from src.rebact_harness.errors import AuthError, BackendUnavailable, DeadlineExceeded

URL = "http://llm.test/v1/chat/completions"


@pytest.fixture
def config(monkeypatch):
    monkeypatch.setenv("TEST_LLM_TOKEN", "sk-test")
    return BackendConfig(kind="http", url=URL, model="test-model", token_env="TEST_LLM_TOKEN",
                         max_retries=2, backoff_base_ms=0, extra_body={"temperature": 0})


def completion(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def request(deadline=None):
    return CompletionRequest(prompt="Goal: craft 1 beehive.", context=EpisodeContext(task_id="t"),
                             deadline=deadline)


def test_posts_chat_completion(config):
    seen = []

    def handler(req):
        seen.append(req)
        return completion("The next action is: get 6 oak planks.")

    backend = HttpBackend(config, transport=httpx.MockTransport(handler))

    assert backend.complete(request()) == "The next action is: get 6 oak planks."
    body = json.loads(seen[0].content)
    assert body == {
        "model": "test-model",
        "messages": [{"role": "user", "content": "Goal: craft 1 beehive."}],
        "temperature": 0,
    }
    assert seen[0].headers["Authorization"] == "Bearer sk-test"


def test_retries_transient_failures(config):
    statuses = iter([503, 429])

    def handler(req):
        status = next(statuses, 200)
        if status != 200:
            return httpx.Response(status)
        return completion("The next action is: inventory.")

    backend = HttpBackend(config, transport=httpx.MockTransport(handler))

    assert backend.complete(request()) == "The next action is: inventory."
    assert backend.retries == 2


def test_gives_up_after_max_retries(config):
    calls = []

    def handler(req):
        calls.append(req)
        return httpx.Response(500)

    backend = HttpBackend(config, transport=httpx.MockTransport(handler))

    with pytest.raises(BackendUnavailable):
        backend.complete(request())
    assert len(calls) == 3


def test_transport_errors_are_retried(config):
    attempts = []

    def handler(req):
        attempts.append(req)
        if len(attempts) == 1:
            raise httpx.ConnectError("connection refused", request=req)
        return completion("The next action is: inventory.")

    backend = HttpBackend(config, transport=httpx.MockTransport(handler))

    assert backend.complete(request()) == "The next action is: inventory."
    assert len(attempts) == 2


def test_rejected_credentials(config):
    backend = HttpBackend(config, transport=httpx.MockTransport(lambda req: httpx.Response(401)))

    with pytest.raises(AuthError):
        backend.complete(request())


def test_missing_token(monkeypatch, config):
    monkeypatch.delenv("TEST_LLM_TOKEN")

    with pytest.raises(AuthError):
        HttpBackend(config)


def test_deadline_already_passed(config):
    backend = HttpBackend(config, transport=httpx.MockTransport(lambda req: completion("x")))

    with pytest.raises(DeadlineExceeded):
        backend.complete(request(deadline=time.monotonic() - 1))


def test_extract_text():
    data = {"choices": [{"message": {"content": "hello"}}]}

    assert extract_text(data, "choices.0.message.content") == "hello"
    with pytest.raises(BackendUnavailable):
        extract_text(data, "choices.1.message.content")
    with pytest.raises(BackendUnavailable):
        extract_text({"choices": [{"message": {"content": None}}]}, "choices.0.message.content")
