"""Minimal client for an Ollama-compatible chat/embedding server.

Only single-turn, non-streaming requests. Transport errors and 5xx replies
are retried with exponential backoff; 4xx replies never are. Request and
response shapes are documented in ``docs/wire.md``.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx
import numpy as np

from decentmem.embedding import DimensionMismatchError, EmbeddingError, normalize

log = logging.getLogger(__name__)

ENV_BASE_URL = "DECENTMEM_LLM_BASE_URL"
ENV_MODEL = "DECENTMEM_LLM_MODEL"


class LLMClientError(Exception):
    pass


class LLMTransportError(LLMClientError):
    """The server could not be reached (after all retries)."""


class LLMEndpointError(LLMClientError):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class LLMResponseError(LLMClientError):
    """The server answered 2xx but the body is not what the protocol promises."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:11434"
    model_name: str = "qwen3:8b"
    timeout: float = 120.0
    max_retries: int = 3
    backoff_ms: float = 500.0
    chat_path: str = "/api/chat"
    embed_path: str = "/api/embed"
    max_in_flight: int = 4
    embed_dimension: int | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        """Config-file values with environment variables taking precedence."""
        if os.environ.get(ENV_BASE_URL):
            overrides["base_url"] = os.environ[ENV_BASE_URL]
        if os.environ.get(ENV_MODEL):
            overrides["model_name"] = os.environ[ENV_MODEL]
        return cls(**overrides)


@dataclass
class ChatExchange:
    system: str
    user: str
    response: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None

    def __post_init__(self) -> None:
        for n in (self.prompt_tokens, self.completion_tokens):
            if n is not None and n < 0:
                raise ValueError("token counts must be nonnegative")


@dataclass
class TokenUsage:
    prompt: int = 0
    completion: int = 0
    exchanges: int = 0

    @property
    def total(self) -> int:
        return self.prompt + self.completion


class ChatClient(Protocol):
    def chat(self, system: str, user: str) -> ChatExchange: ...


@dataclass
class OllamaClient:
    config: EndpointConfig = field(default_factory=EndpointConfig)
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self) -> None:
        self._http = httpx.Client(base_url=self.config.base_url, timeout=self.config.timeout,
                                  transport=self.transport)
        self._slots = threading.BoundedSemaphore(self.config.max_in_flight)
        self._usage_lock = threading.Lock()
        self.usage = TokenUsage()
        self.retries = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "OllamaClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _post(self, path: str, payload: dict) -> dict:
        cfg = self.config
        for attempt in range(cfg.max_retries + 1):
            try:
                with self._slots:
                    resp = self._http.post(path, json=payload)
            except httpx.TransportError as exc:
                failure: Exception = exc
            else:
                if resp.status_code < 400:
                    try:
                        body = resp.json()
                    except ValueError:
                        raise LLMResponseError(f"{path}: response is not JSON") from None
                    if not isinstance(body, dict):
                        raise LLMResponseError(f"{path}: expected a JSON object")
                    return body
                if resp.status_code < 500:
                    raise LLMEndpointError(resp.status_code, resp.text)
                failure = LLMEndpointError(resp.status_code, resp.text)
            if attempt == cfg.max_retries:
                if isinstance(failure, LLMEndpointError):
                    raise failure
                raise LLMTransportError(f"{path}: {failure}") from failure
            self.retries += 1
            delay = cfg.backoff_ms * (2 ** attempt) / 1000.0
            log.info("retrying %s after %s (attempt %d, %.2fs)", path, failure, attempt + 1, delay)
            self.sleep(delay)
        raise AssertionError("unreachable")

    def chat(self, system: str, user: str) -> ChatExchange:
        body = self._post(self.config.chat_path, {
            "model": self.config.model_name,
            "messages": [{"role": "system", "content": system},
                         {"role": "user", "content": user}],
            "stream": False,
        })
        try:
            text = body["message"]["content"]
        except (KeyError, TypeError):
            raise LLMResponseError("chat response lacks message.content") from None
        if not isinstance(text, str):
            raise LLMResponseError("message.content is not a string")
        exchange = ChatExchange(system, user, text, body.get("prompt_eval_count"),
                                body.get("eval_count"))
        with self._usage_lock:
            self.usage.exchanges += 1
            self.usage.prompt += exchange.prompt_tokens or 0
            self.usage.completion += exchange.completion_tokens or 0
        return exchange

    def embed(self, text: str) -> np.ndarray:
        body = self._post(self.config.embed_path, {"model": self.config.model_name, "input": text})
        if "embeddings" in body:
            vecs = body["embeddings"]
            values = vecs[0] if isinstance(vecs, list) and vecs else None
        else:
            values = body.get("embedding")
        if not isinstance(values, list) or not values:
            raise LLMResponseError("embedding response lacks a vector")
        try:
            vec = normalize(values)
        except EmbeddingError:
            raise
        except (TypeError, ValueError) as exc:
            raise LLMResponseError(f"embedding is not numeric: {exc}") from None
        dim = self.config.embed_dimension
        if dim is not None and vec.shape[0] != dim:
            raise DimensionMismatchError(f"server returned dimension {vec.shape[0]}, expected {dim}")
        return vec


class RemoteEmbedder:
    """Adapts :meth:`OllamaClient.embed` to the ``Embedder`` protocol."""

    def __init__(self, client: OllamaClient, dimension: int) -> None:
        self.client = client
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = self.client.embed(text)
        if vec.shape[0] != self.dimension:
            raise DimensionMismatchError(f"server returned dimension {vec.shape[0]}, expected {self.dimension}")
        return vec


def embed_remote(cfg: EndpointConfig, text: str, transport: httpx.BaseTransport | None = None) -> np.ndarray:
    with OllamaClient(cfg, transport=transport) as client:
        return client.embed(text)


def chat(cfg: EndpointConfig, system: str, user: str,
         transport: httpx.BaseTransport | None = None) -> ChatExchange:
    with OllamaClient(cfg, transport=transport) as client:
        return client.chat(system, user)
