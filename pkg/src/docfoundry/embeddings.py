"""Pluggable text embedders for the dense store.

Embedders are deterministic per text and produce L2-normalized vectors
(the zero vector for empty/whitespace-only text). The hashed character
n-gram embedder is the fully offline default; RemoteEmbedder speaks a
minimal HTTP contract (POST {"texts": [...]} -> {"vectors": [[...]]}) for
real sentence-transformer services.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class EmbedderError(Exception):
    pass


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return vec
    return vec / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is zero."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, clamped to [0, 2]."""
    return min(2.0, max(0.0, 1.0 - cosine_similarity(a, b)))


class HashedNgramEmbedder:
    """Offline deterministic embedder: hashed character n-gram counts.

    The text is lowercased, padded with boundary markers, and its
    character n-grams are hashed into ``dim`` buckets; the resulting
    count vector is L2-normalized.
    """

    def __init__(self, dim: int = 256, n: int = 3, seed: int = 0):
        if dim <= 0 or n <= 0:
            raise ValueError("dim and n must be positive")
        self.dim = dim
        self.n = n
        self.seed = seed

    def ngrams(self, text: str) -> list[str]:
        padded = f"{'#' * (self.n - 1)}{text.lower()}{'#' * (self.n - 1)}"
        return [padded[i:i + self.n] for i in range(len(padded) - self.n + 1)]

    def bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"),
                                 key=str(self.seed).encode("utf-8"),
                                 digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        if not text.strip():
            return vec
        for gram in self.ngrams(text):
            vec[self.bucket(gram)] += 1.0
        return normalize(vec)


class RemoteEmbedder:
    """Embedder backed by an HTTP service.

    Contract: POST {base_url}/embed with {"texts": [...]} returns
    {"vectors": [[...]]} with one vector per text. Transport failures
    propagate as EmbedderError with context.
    """

    def __init__(self, base_url: str, dim: int, timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout_s = timeout_s

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        try:
            resp = httpx.post(f"{self.base_url}/embed", json={"texts": texts},
                              timeout=self.timeout_s)
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:
            raise EmbedderError(
                f"remote embedder at {self.base_url} failed: {exc}") from exc
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbedderError(
                f"remote embedder returned {len(vectors or [])} vectors "
                f"for {len(texts)} texts")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise EmbedderError(
                    f"remote embedder returned shape {arr.shape}, "
                    f"expected ({self.dim},)")
            out.append(normalize(arr))
        return out
