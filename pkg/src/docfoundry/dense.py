"""Embedding-based semantic store over the HNSW index.

Wires an Embedder to an HnswIndex, assigns sequential node ids per
chunk_ref, and persists both together. Deletion tombstones id_map
entries; the graph is never repaired (non-goal).
"""

from __future__ import annotations

import numpy as np

from .embeddings import Embedder, HashedNgramEmbedder
from .hnsw import HnswIndex, NnHit
from .ingest import Chunk


class DenseStoreError(Exception):
    pass


class DenseStore:
    def __init__(self, embedder: Embedder | None = None,
                 M: int = 16, ef_construction: int = 200,
                 ef_search: int = 50, seed: int = 0):
        self.embedder = embedder or HashedNgramEmbedder()
        self.index = HnswIndex(dim=self.embedder.dim, M=M,
                               ef_construction=ef_construction,
                               ef_search=ef_search, seed=seed)
        self._next_id = 0

    def chunk_refs(self) -> set[str]:
        return self.index.live_chunk_refs()

    def embed_chunks(self, chunks: list[Chunk]) -> list[np.ndarray]:
        """Embedding pass, separated so callers can stage failures before
        any index mutation (the dual store's atomicity contract)."""
        return [self.embedder.embed(chunk.text) for chunk in chunks]

    def add_chunks(self, chunks: list[Chunk],
                   vectors: list[np.ndarray] | None = None) -> None:
        refs = self.chunk_refs()
        for chunk in chunks:
            if chunk.chunk_ref in refs:
                raise DenseStoreError(f"chunk already indexed: {chunk.chunk_ref}")
            refs.add(chunk.chunk_ref)
        if vectors is None:
            vectors = self.embed_chunks(chunks)
        for chunk, vector in zip(chunks, vectors):
            self.index.insert(self._next_id, vector, chunk_ref=chunk.chunk_ref)
            self._next_id += 1

    def search_text(self, text: str, k: int, ef: int | None = None) -> list[NnHit]:
        query = self.embedder.embed(text)
        return self.search_vector(query, k, ef)

    def search_vector(self, query: np.ndarray, k: int,
                      ef: int | None = None) -> list[NnHit]:
        # over-fetch to compensate for tombstoned entries filtered by search
        dead = sum(1 for ref in self.index.id_map.values() if ref is None)
        ef = max(ef if ef is not None else self.index.ef_search, k + dead)
        return self.index.search(query, k, ef=ef)[:k]

    def delete_document(self, doc_id: str) -> int:
        """Tombstone every chunk of a document; returns tombstone count."""
        count = 0
        for ref in list(self.chunk_refs()):
            if ref.rsplit(":", 1)[0] == doc_id:
                count += self.index.tombstone(ref)
        if count == 0:
            raise DenseStoreError(f"unknown doc_id: {doc_id}")
        return count

    def save(self, path) -> None:
        self.index.save(path)

    def load_index(self, path) -> None:
        self.index = HnswIndex.load(path)
        if self.index.dim != self.embedder.dim:
            raise DenseStoreError(
                f"index dim {self.index.dim} does not match embedder "
                f"dim {self.embedder.dim}")
        self._next_id = max(self.index.vectors, default=-1) + 1
