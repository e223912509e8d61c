from __future__ import annotations

import json
import threading
import time

import httpx
import numpy as np
import pytest

from decentmem.embedding import DimensionMismatchError, EmbeddingError
from decentmem.llm_client import (
    ChatExchange,
    EndpointConfig,
    LLMEndpointError,
    LLMResponseError,
    LLMTransportError,
    OllamaClient,
    RemoteEmbedder,
    chat,
    embed_remote,
)

CFG = EndpointConfig(base_url="http://llm.test", model_name="m", backoff_ms=1.0)


def chat_body(text="hello", p=11, c=7):
    return {"model": "m", "message": {"role": "assistant", "content": text}, "done": True,
            "prompt_eval_count": p, "eval_count": c}


def client_for(handler, cfg=CFG):
    return OllamaClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None)


def test_chat_fixture_round_trip():
    seen = {}

    def handler(req):
        seen["path"] = req.url.path
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json=chat_body("fixture text"))

    ex = chat(CFG, "sys", "usr", transport=httpx.MockTransport(handler))
    assert ex.response == "fixture text"
    assert (ex.prompt_tokens, ex.completion_tokens) == (11, 7)
    assert seen["path"] == "/api/chat"
    assert seen["body"] == {"model": "m", "stream": False,
                            "messages": [{"role": "system", "content": "sys"},
                                         {"role": "user", "content": "usr"}]}


def test_retries_on_5xx_then_succeeds():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(500, text="boom") if len(calls) <= 2 else httpx.Response(200, json=chat_body())

    delays = []
    c = OllamaClient(CFG, transport=httpx.MockTransport(handler), sleep=delays.append)
    assert c.chat("s", "u").response == "hello"
    assert c.retries == 2
    assert delays == [0.001, 0.002]


def test_no_retry_on_4xx():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(404, text="no such model")

    c = client_for(handler)
    with pytest.raises(LLMEndpointError) as err:
        c.chat("s", "u")
    assert err.value.status == 404
    assert len(calls) == 1 and c.retries == 0


def test_transport_failure_after_retries():
    def handler(req):
        raise httpx.ConnectError("refused", request=req)

    c = client_for(handler)
    with pytest.raises(LLMTransportError):
        c.chat("s", "u")
    assert c.retries == CFG.max_retries


def test_persistent_5xx_is_endpoint_error():
    c = client_for(lambda req: httpx.Response(503, text="busy"))
    with pytest.raises(LLMEndpointError) as err:
        c.chat("s", "u")
    assert err.value.status == 503


@pytest.mark.parametrize("resp", [
    httpx.Response(200, text="not json"),
    httpx.Response(200, json=[1, 2]),
    httpx.Response(200, json={"message": {}}),
    httpx.Response(200, json={"message": {"content": 5}}),
])
def test_malformed_bodies(resp):
    with pytest.raises(LLMResponseError):
        client_for(lambda req: resp).chat("s", "u")


def test_error_kinds_distinct():
    kinds = {LLMTransportError, LLMEndpointError, LLMResponseError}
    assert len(kinds) == 3
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_token_accounting():
    bodies = iter([chat_body(p=3, c=4), chat_body(p=10, c=1), {"message": {"content": "x"}}])
    c = client_for(lambda req: httpx.Response(200, json=next(bodies)))
    for _ in range(3):
        c.chat("s", "u")
    assert (c.usage.prompt, c.usage.completion, c.usage.exchanges) == (13, 5, 3)
    assert c.usage.total == 18


def test_embed_normalizes():
    v = embed_remote(CFG, "t", transport=httpx.MockTransport(
        lambda req: httpx.Response(200, json={"embeddings": [[3, 4]]})))
    np.testing.assert_allclose(v, [0.6, 0.8])


def test_embed_legacy_shape_and_determinism():
    c = client_for(lambda req: httpx.Response(200, json={"embedding": [1.0, 2.0, 2.0]}))
    np.testing.assert_array_equal(c.embed("a"), c.embed("a"))


def test_embed_zero_vector():
    c = client_for(lambda req: httpx.Response(200, json={"embeddings": [[0, 0]]}))
    with pytest.raises(EmbeddingError):
        c.embed("a")


def test_embed_dimension_mismatch():
    cfg = EndpointConfig(base_url="http://llm.test", embed_dimension=3)
    c = client_for(lambda req: httpx.Response(200, json={"embeddings": [[3, 4]]}), cfg)
    with pytest.raises(DimensionMismatchError):
        c.embed("a")
    c2 = client_for(lambda req: httpx.Response(200, json={"embeddings": [[3, 4]]}))
    with pytest.raises(DimensionMismatchError):
        RemoteEmbedder(c2, 256).embed("a")


def test_embed_non_numeric():
    c = client_for(lambda req: httpx.Response(200, json={"embeddings": [["a", "b"]]}))
    with pytest.raises(LLMResponseError):
        c.embed("a")


def test_in_flight_cap():
    cfg = EndpointConfig(base_url="http://llm.test", max_in_flight=2)
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(req):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json=chat_body())

    c = client_for(handler, cfg)
    threads = [threading.Thread(target=c.chat, args=("s", "u")) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2
    assert c.usage.exchanges == 6


def test_config_validation_and_env(monkeypatch):
    with pytest.raises(ValueError):
        EndpointConfig(timeout=0)
    with pytest.raises(ValueError):
        EndpointConfig(max_retries=-1)
    with pytest.raises(ValueError):
        ChatExchange("s", "u", "r", prompt_tokens=-1)
    monkeypatch.setenv("DECENTMEM_LLM_BASE_URL", "http://other:1")
    monkeypatch.setenv("DECENTMEM_LLM_MODEL", "tiny")
    cfg = EndpointConfig.from_env(base_url="http://file:2", model_name="big")
    assert (cfg.base_url, cfg.model_name) == ("http://other:1", "tiny")
