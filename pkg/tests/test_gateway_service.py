import asyncio
import json
import time

import httpx
import pytest

from triage_audit.exceptions import ConfigError, PersistentFailure, TransientBackendError
from triage_audit.models import (
    ChatMessage,
    DecodeConfig,
    EndpointKind,
    ModelEndpoint,
    RetryPolicy,
)
from triage_audit.services.gateway_service import (
    Gateway,
    HttpChatBackend,
    SimulatorBackend,
    complete,
    create_backend,
)
from triage_audit.utils.rate_limiter import RateLimiter
from tests.conftest import sim_endpoint

MESSAGES = [ChatMessage(role="system", content="sys"), ChatMessage(role="user", content="case")]
GOOD = "ESI Level: 3 because of vitals"


class ScriptedBackend:
    """Devuelve (o lanza) los elementos del guion en orden."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    async def send(self, messages, decode, features=None):
        self.calls += 1
        item = self.script.pop(0) if self.script else self.last
        self.last = item
        if isinstance(item, Exception):
            raise item
        return item


class FakeSleep:
    def __init__(self):
        self.delays = []

    async def __call__(self, delay):
        self.delays.append(delay)


def _http_endpoint(**kw):
    base = dict(id="remote", kind=EndpointKind.HTTP_CHAT, base_url="http://model.test/v1", model_name="m")
    base.update(kw)
    return ModelEndpoint(**base)


@pytest.mark.asyncio
async def test_retries_transient_errors_with_backoff():
    backend = ScriptedBackend([TransientBackendError("HTTP 503", status=503), "", GOOD])
    sleep = FakeSleep()
    result = await complete(sim_endpoint(), MESSAGES, DecodeConfig(), RetryPolicy(), backend, sleep=sleep)
    assert result.raw_text == GOOD
    assert result.attempts == 3
    assert sleep.delays == [1.0, 2.0]


@pytest.mark.asyncio
async def test_short_response_exhausts_retries():
    backend = ScriptedBackend(["ok"])
    sleep = FakeSleep()
    retry = RetryPolicy(max_retries=5)
    with pytest.raises(PersistentFailure) as exc:
        await complete(sim_endpoint(), MESSAGES, DecodeConfig(), retry, backend, sleep=sleep)
    assert exc.value.attempts == 6
    assert exc.value.last_text == "ok"
    assert backend.calls == 6
    assert sleep.delays == [1.0, 2.0, 4.0, 8.0, 16.0]


@pytest.mark.asyncio
async def test_non_retryable_failure_is_immediate():
    backend = ScriptedBackend([PersistentFailure("HTTP 400", attempts=1, last_status=400)])
    with pytest.raises(PersistentFailure) as exc:
        await complete(sim_endpoint(), MESSAGES, DecodeConfig(), RetryPolicy(), backend, sleep=FakeSleep())
    assert exc.value.attempts == 1
    assert backend.calls == 1


@pytest.mark.asyncio
async def test_config_error_propagates():
    backend = ScriptedBackend([ConfigError("auth")])
    with pytest.raises(ConfigError):
        await complete(sim_endpoint(), MESSAGES, DecodeConfig(), RetryPolicy(), backend, sleep=FakeSleep())


def test_backoff_reuses_last_delay():
    retry = RetryPolicy(backoff=[1.0, 2.0])
    assert [retry.delay_for(i) for i in range(4)] == [1.0, 2.0, 2.0, 2.0]


def _completion_body(content):
    return {
        "id": "chatcmpl-1",
        "object": "chat.completion",
        "created": 0,
        "model": "m",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    }


@pytest.mark.asyncio
async def test_http_backend_sends_chat_completion(monkeypatch):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=_completion_body(GOOD))

    monkeypatch.setenv("TEST_MODEL_KEY", "secret")
    client = httpx.AsyncClient(transport=httpx.MockTransport(handler))
    backend = HttpChatBackend(_http_endpoint(api_key_ref="TEST_MODEL_KEY"), http_client=client)
    try:
        text = await backend.send(MESSAGES, DecodeConfig(temperature=0.0, max_tokens=64))
    finally:
        await backend.close()
    assert text == GOOD
    assert seen["url"] == "http://model.test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["temperature"] == 0.0
    assert seen["body"]["max_tokens"] == 64
    assert seen["body"]["messages"][1] == {"role": "user", "content": "case"}


@pytest.mark.asyncio
@pytest.mark.parametrize("status,error", [
    (503, TransientBackendError),
    (429, TransientBackendError),
    (400, PersistentFailure),
    (401, ConfigError),
])
async def test_http_backend_maps_status(status, error):
    def handler(request):
        return httpx.Response(status, json={"error": {"message": "nope"}})

    client = httpx.AsyncClient(transport=httpx.MockTransport(handler))
    backend = HttpChatBackend(_http_endpoint(), http_client=client)
    try:
        with pytest.raises(error):
            await backend.send(MESSAGES, DecodeConfig())
    finally:
        await backend.close()


def test_missing_api_key_is_config_error(monkeypatch):
    monkeypatch.delenv("MISSING_MODEL_KEY", raising=False)
    with pytest.raises(ConfigError):
        HttpChatBackend(_http_endpoint(api_key_ref="MISSING_MODEL_KEY"))


def test_create_backend_for_simulator():
    assert isinstance(create_backend(sim_endpoint()), SimulatorBackend)


@pytest.mark.asyncio
async def test_limiter_bounds_in_flight():
    limiter = RateLimiter(max_in_flight=2, inter_request_delay=0.0)

    class SlowBackend:
        async def send(self, messages, decode, features=None):
            await asyncio.sleep(0.01)
            return GOOD

    backend = SlowBackend()
    await asyncio.gather(*(
        complete(sim_endpoint(), MESSAGES, DecodeConfig(), RetryPolicy(), backend, limiter=limiter)
        for _ in range(12)
    ))
    assert limiter.peak_in_flight == 2
    assert limiter.in_flight == 0


@pytest.mark.asyncio
async def test_limiter_spaces_request_starts():
    limiter = RateLimiter(max_in_flight=4, inter_request_delay=0.05)
    starts = []

    async def one():
        async with limiter.slot():
            starts.append(time.monotonic())

    await asyncio.gather(*(one() for _ in range(4)))
    gaps = [b - a for a, b in zip(starts, starts[1:])]
    assert all(g >= 0.045 for g in gaps)


@pytest.mark.asyncio
async def test_gateway_with_simulator_endpoint():
    gateway = Gateway([sim_endpoint(p_flip=0.0)])
    try:
        result = await gateway.complete("sim", MESSAGES)
    finally:
        await gateway.close()
    assert result.raw_text.startswith("ESI Level: ")
    assert result.attempts == 1
    assert gateway.limiter_for("sim").inter_request_delay == 0.0
