"""Text embeddings and cosine similarity.

Embeddings are plain ``float64`` numpy vectors of unit L2 norm. The built-in
:class:`HashEmbedder` is a signed feature-hashing bag of words, so nothing
here needs a model server; any object with ``dimension`` and ``embed`` can
stand in for it (see :class:`Embedder`).
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from typing import Protocol

import numpy as np

DEFAULT_DIMENSION = 256
NORM_TOLERANCE = 1e-9

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
# Fixed salts keep bucket/sign hashes stable across runs and platforms.
_BUCKET_PERSON = b"dm-bucket"
_SIGN_PERSON = b"dm-sign"
_SALT = b"decentmem-hash01"


class EmbeddingError(ValueError):
    """Raised for vectors that cannot be normalized (zero, non-finite)."""


class DimensionMismatchError(ValueError):
    """Two vectors (or a vector and a store) disagree on dimension."""


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def normalize(values) -> np.ndarray:
    """Return ``values`` as a unit-norm float64 vector."""
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if vec.size == 0 or not np.all(np.isfinite(vec)):
        raise EmbeddingError("embedding must be a non-empty finite vector")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EmbeddingError("cannot normalize a zero vector")
    return vec / norm


def is_unit(vec: np.ndarray, tol: float = NORM_TOLERANCE) -> bool:
    return abs(float(np.linalg.norm(vec)) - 1.0) <= tol


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clipped to [-1, 1]."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(min(1.0, max(-1.0, np.dot(a, b))))


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def _digest(token: str, person: bytes) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=person, salt=_SALT)
    return int.from_bytes(h.digest(), "little")


def hash_embed(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Signed feature-hashing embedding of a bag of lowercase tokens.

    Each token adds +1 or -1 to bucket ``h1(token) % dimension``; the sign is
    taken from the low bit of an independent hash ``h2``.
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    tokens = tokenize(text)
    if not tokens:
        raise EmbeddingError(f"text has no tokens: {text!r}")
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokens:
        bucket = _digest(token, _BUCKET_PERSON) % dimension
        sign = 1.0 if _digest(token, _SIGN_PERSON) & 1 else -1.0
        vec[bucket] += sign
    return normalize(vec)


class HashEmbedder:
    """Deterministic offline embedder; caches vectors for repeated texts."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, cache_size: int = 4096) -> None:
        self.dimension = dimension
        self._cached = lru_cache(maxsize=cache_size)(self._embed_uncached)

    def _embed_uncached(self, text: str) -> np.ndarray:
        vec = hash_embed(text, self.dimension)
        vec.setflags(write=False)
        return vec

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)
