import json

import httpx
import pytest

from taxorag import (
    AuditLog, AuthError, CandidateEchoProvider, ChatRequest, GenerationConfig,
    MalformedResponse, OpenAIChatProvider, ProviderExhausted,
    ScriptedProvider, complete)


@pytest.fixture
def config():
    return GenerationConfig()


def test_generation_config():
    config = GenerationConfig()
    assert (config.temperature, config.top_p) == (0.4, 0.4)
    with pytest.raises(ValueError):
        GenerationConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        GenerationConfig(top_p=0.0)
    with pytest.raises(ValueError):
        GenerationConfig(top_p=1.5)


@pytest.mark.asyncio
async def test_scripted_sequence(config):
    provider = ScriptedProvider(["dogs", "dog food"])
    first = await complete(provider, "system", "user", config)
    second = await complete(provider, "system", "user", config)
    assert (first.response_text, second.response_text) == ("dogs", "dog food")
    assert first.latency >= 0
    assert len(provider.requests) == 2

    with pytest.raises(ProviderExhausted):
        await complete(provider, "system", "user", config)

    # A default keeps answering
    provider = ScriptedProvider([], default="cats")
    assert (await complete(provider, "s", "u", config)).response_text == "cats"


@pytest.mark.asyncio
async def test_scripted_mapping_and_callable(config):
    provider = ScriptedProvider({("d1", 1): "pets", ("d1", 2): "cats"})
    exchange = await complete(provider, "s", "u", config,
                              document_id="d1", level=2)
    assert exchange.response_text == "cats"
    assert (exchange.document_id, exchange.level) == ("d1", 2)
    with pytest.raises(ProviderExhausted):
        await complete(provider, "s", "u", config, document_id="d2", level=1)

    provider = ScriptedProvider(lambda request: request.candidates[-1])
    exchange = await complete(provider, "s", "u", config,
                              candidates=("a", "b"))
    assert exchange.response_text == "b"


@pytest.mark.asyncio
async def test_empty_prompts_rejected(config):
    provider = ScriptedProvider(default="x")
    with pytest.raises(ValueError):
        await complete(provider, "", "user", config)
    with pytest.raises(ValueError):
        await complete(provider, "system", "", config)


@pytest.mark.asyncio
async def test_candidate_echo(config):
    provider = CandidateEchoProvider()
    exchange = await complete(
        provider, "system", "my cat keeps using the cat flaps", config,
        candidates=("dog food", "cat flaps", "cat food"))
    assert exchange.response_text == "cat flaps"
    assert exchange.provider_meta["overlap"] == 2

    # No overlap at all: the first candidate
    exchange = await complete(provider, "system", "nothing relevant", config,
                              candidates=("dog food", "cat flaps"))
    assert exchange.response_text == "dog food"

    # Ties go to the earlier candidate
    exchange = await complete(provider, "system", "food", config,
                              candidates=("dog food", "cat food"))
    assert exchange.response_text == "dog food"

    with pytest.raises(MalformedResponse):
        await complete(provider, "system", "user", config)


def chat_response(content="dogs"):
    return httpx.Response(200, json={
        "id": "chatcmpl-1",
        "object": "chat.completion",
        "created": 0,
        "model": "gpt-3.5-turbo",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
        "usage": {"prompt_tokens": 12, "completion_tokens": 1,
                  "total_tokens": 13},
    })


def make_provider(handler, **kwargs):
    client = httpx.AsyncClient(transport=httpx.MockTransport(handler))
    kwargs.setdefault("base_delay", 0.001)
    kwargs.setdefault("max_delay", 0.004)
    return OpenAIChatProvider(api_key="sk-test",
                              base_url="http://chat.test/v1",
                              http_client=client, **kwargs)


@pytest.mark.asyncio
async def test_openai_chat_retries(config):
    statuses = [429, 429]
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        if statuses:
            return httpx.Response(statuses.pop(0), json={
                "error": {"message": "rate limited", "type": "rate_limit"}})
        return chat_response("Dogs")

    exchange = await complete(make_provider(handler), "the prompt",
                              "the document", config)
    assert exchange.response_text == "Dogs"
    assert exchange.provider_meta["retries"] == 2
    assert exchange.provider_meta["delays"] == pytest.approx([0.001, 0.002])
    assert exchange.provider_meta["usage"]["prompt_tokens"] == 12

    assert len(bodies) == 3
    body = bodies[-1]
    assert body["messages"] == [
        {"role": "system", "content": "the prompt"},
        {"role": "user", "content": "the document"},
    ]
    assert body["temperature"] == 0.4
    assert body["top_p"] == 0.4
    assert body["model"] == "gpt-3.5-turbo"


@pytest.mark.asyncio
async def test_openai_chat_exhausted(config):
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(429, json={"error": {"message": "slow down"}})

    with pytest.raises(ProviderExhausted) as excinfo:
        await complete(make_provider(handler, max_tries=4), "s", "u", config)
    assert len(calls) == 4
    assert excinfo.value.retries == 3
    assert excinfo.value.status == 429


@pytest.mark.asyncio
async def test_openai_chat_errors(config):
    def unauthorized(request):
        return httpx.Response(401, json={"error": {"message": "bad key"}})

    with pytest.raises(AuthError):
        await complete(make_provider(unauthorized), "s", "u", config)

    def empty(request):
        response = chat_response()
        payload = json.loads(response.content)
        payload["choices"] = []
        return httpx.Response(200, json=payload)

    with pytest.raises(MalformedResponse):
        await complete(make_provider(empty), "s", "u", config)


@pytest.mark.asyncio
async def test_audit_log(tmpdir, config):
    path = str(tmpdir.join("audit.jsonl"))
    audit = AuditLog(path)
    provider = ScriptedProvider(["pets", "cats"])
    for level in (1, 2):
        await audit.record(await provider.complete(
            ChatRequest("system", "user", document_id="d0", level=level),
            config))

    with open(path) as f:
        records = [json.loads(line) for line in f]
    assert [r["response"] for r in records] == ["pets", "cats"]
    assert records[0]["system"] == "system"
    assert records[1]["level"] == 2
    assert "latency" in records[0]
