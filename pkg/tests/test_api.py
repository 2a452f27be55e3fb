import random

import httpx
import pytest
from fastapi.testclient import TestClient

from triage_audit.main import app
from triage_audit.models import DecodeConfig, EndpointKind, ModelEndpoint, SimProfile, Strategy
from triage_audit.routers import chat
from triage_audit.routers.chat import SimulatorState, get_simulator_state
from triage_audit.services.gateway_service import HttpChatBackend
from triage_audit.services.parsing_service import parse
from triage_audit.services.simulator_service import Simulator
from triage_audit.services.strategy_service import BASELINE_PROMPT, build_messages, prompt_checksum
from triage_audit.services.vignette_service import make_counterfactual

BIASED = SimProfile(seed=1, p_flip=1.0, fm_skew=1.0)


@pytest.fixture
def biased_state():
    state = SimulatorState({"biased": Simulator(BIASED)})
    app.dependency_overrides[get_simulator_state] = lambda: state
    yield state
    app.dependency_overrides.clear()


@pytest.fixture
def client(biased_state):
    return TestClient(app)


@pytest.fixture
def pair(original, pools):
    return original, make_counterfactual(original, pools, random.Random(3))


def _body(v, model="biased"):
    messages = build_messages(BASELINE_PROMPT, v.text)
    return {"model": model, "messages": [m.model_dump() for m in messages], "temperature": 0.0}


def test_health(client):
    assert client.get("/health").json() == {"status": "healthy"}
    assert "X-Process-Time" in client.get("/").headers


def test_list_prompts(client):
    response = client.get("/api/prompts")
    assert response.status_code == 200
    items = response.json()
    assert [i["strategy"] for i in items] == ["Baseline", "CoT", "Debiased", "Blind"]
    for item in items:
        assert item["sha256"] == prompt_checksum(item["system_text"])
    by_strategy = {i["strategy"]: i for i in items}
    assert by_strategy["Blind"]["sha256"] == by_strategy["Baseline"]["sha256"]
    assert by_strategy["Blind"]["has_demographics"] is False
    assert by_strategy["CoT"]["has_cot"] is True
    assert by_strategy["Debiased"]["has_fairness_instruction"] is True


def test_get_prompt(client):
    response = client.get("/api/prompts/Blind")
    assert response.status_code == 200
    assert response.json()["strategy"] == Strategy.BLIND.value
    assert client.get("/api/prompts/Unknown").status_code == 422


def test_chat_completion_is_biased_against_female_version(client, pair):
    o, cf = pair
    levels = {}
    for v in pair:
        response = client.post("/v1/chat/completions", json=_body(v))
        assert response.status_code == 200
        data = response.json()
        assert data["object"] == "chat.completion"
        content = data["choices"][0]["message"]["content"]
        assert content.startswith("ESI Level: ")
        levels[v.gender.value] = parse(content).esi
    assert levels["F"] > levels["M"]


def test_chat_completion_requires_user_message(client):
    body = {"model": "biased", "messages": [{"role": "system", "content": BASELINE_PROMPT}]}
    assert client.post("/v1/chat/completions", json=body).status_code == 400


def test_chat_completion_api_key(client, original, monkeypatch):
    monkeypatch.setattr(chat.settings, "SIM_API_KEY", "secret")
    assert client.post("/v1/chat/completions", json=_body(original)).status_code == 401
    response = client.post("/v1/chat/completions", json=_body(original),
                           headers={"Authorization": "Bearer secret"})
    assert response.status_code == 200


def test_unknown_profile_with_several_loaded(original):
    state = SimulatorState({"a": Simulator(SimProfile()), "b": Simulator(BIASED)})
    app.dependency_overrides[get_simulator_state] = lambda: state
    try:
        response = TestClient(app).post("/v1/chat/completions", json=_body(original, model="zzz"))
    finally:
        app.dependency_overrides.clear()
    assert response.status_code == 404


@pytest.mark.asyncio
async def test_http_backend_against_served_simulator(biased_state, pair):
    endpoint = ModelEndpoint(id="http", kind=EndpointKind.HTTP_CHAT, base_url="http://sim/v1", model_name="biased")
    http_client = httpx.AsyncClient(transport=httpx.ASGITransport(app=app))
    backend = HttpChatBackend(endpoint, http_client=http_client)
    levels = {}
    try:
        for v in pair:
            text = await backend.send(build_messages(BASELINE_PROMPT, v.text), DecodeConfig())
            levels[v.gender.value] = parse(text).esi
    finally:
        await backend.close()
    assert levels["F"] > levels["M"]
