"""Parallel sparse + dense stores with reciprocal-rank-fusion retrieval.

Both stores always index exactly the same chunk_ref set (staged-commit
ingest; failures in either store leave both untouched). Hybrid search
takes the top 4*k candidates from each store and fuses them with RRF,
which reads only ranks and is therefore invariant under any
order-preserving rescaling of sub-store scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import query as q
from . import sparse
from .dense import DenseStore
from .embeddings import HashedNgramEmbedder
from .ingest import (Chunk, ChunkingConfig, DocumentRecord, chunk_document,
                     load_chunks, load_documents, save_chunks, save_documents)

RRF_K = 60
CANDIDATE_DEPTH_FACTOR = 4

MANIFEST_VERSION = 1


class DualStoreError(Exception):
    pass


class EmptyStoreError(DualStoreError):
    pass


@dataclass(frozen=True)
class HybridHit:
    chunk_ref: str
    fused_score: float
    sparse_rank: int | None = None
    dense_rank: int | None = None
    sparse_score: float | None = None
    dense_distance: float | None = None
    highlights: tuple[tuple[int, int], ...] = ()


def rrf_fuse(rankings: list[list[str]], k_rrf: int = RRF_K) -> list[tuple[str, float]]:
    """Reciprocal rank fusion: score(d) = sum over lists of 1/(k_rrf + rank).

    Ranks are 1-based; output is sorted by fused score descending, ties
    broken by chunk_ref ascending.
    """
    if not rankings:
        raise ValueError("rankings must be non-empty")
    scores: dict[str, float] = {}
    for ranking in rankings:
        for rank, ref in enumerate(ranking, start=1):
            scores[ref] = scores.get(ref, 0.0) + 1.0 / (k_rrf + rank)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


class DualStore:
    """Sparse and dense stores maintained in parallel over the same chunks."""

    def __init__(self, embedder=None, analyzer: sparse.AnalyzerConfig | None = None,
                 chunking: ChunkingConfig | None = None, seed: int = 0):
        self.embedder = embedder or HashedNgramEmbedder()
        self.chunking = chunking or ChunkingConfig()
        self.sparse_index = sparse.InvertedIndex(
            analyzer=analyzer or sparse.AnalyzerConfig())
        self.dense_store = DenseStore(embedder=self.embedder, seed=seed)
        self.documents: dict[str, DocumentRecord] = {}
        self.chunks: dict[str, Chunk] = {}

    # --- ingest ----------------------------------------------------------------

    def chunk_refs(self) -> set[str]:
        return set(self.chunks)

    def chunk_texts(self) -> dict[str, str]:
        return {ref: chunk.text for ref, chunk in self.chunks.items()}

    def ingest(self, chunks: list[Chunk]) -> None:
        """Add chunks to both stores atomically.

        All failure-prone work (duplicate detection, embedding) happens
        before either store is mutated, so a failure leaves both stores
        unchanged.
        """
        if not chunks:
            return
        seen = set()
        for chunk in chunks:
            if chunk.chunk_ref in self.chunks or chunk.chunk_ref in seen:
                raise sparse.DuplicateChunkError(
                    f"chunk already ingested: {chunk.chunk_ref}")
            seen.add(chunk.chunk_ref)
        vectors = self.dense_store.embed_chunks(chunks)  # may raise; no mutation yet
        self.sparse_index.add_chunks(chunks)
        self.dense_store.add_chunks(chunks, vectors=vectors)
        for chunk in chunks:
            self.chunks[chunk.chunk_ref] = chunk

    def add_documents(self, records: list[DocumentRecord]) -> list[Chunk]:
        """Chunk and ingest documents; returns the new chunks."""
        new_chunks: list[Chunk] = []
        for record in records:
            if record.doc_id in self.documents:
                raise sparse.DuplicateChunkError(
                    f"document already ingested: {record.source_path}")
            new_chunks.extend(chunk_document(record, self.chunking))
        self.ingest(new_chunks)
        for record in records:
            self.documents[record.doc_id] = record
        return new_chunks

    def delete_document(self, doc_id: str) -> None:
        """Sparse delete + dense tombstone, preserving visible parity."""
        if doc_id not in self.documents and not any(
                ref.rsplit(":", 1)[0] == doc_id for ref in self.chunks):
            raise sparse.UnknownDocumentError(f"unknown doc_id: {doc_id}")
        self.sparse_index.delete_document(doc_id)
        self.dense_store.delete_document(doc_id)
        self.documents.pop(doc_id, None)
        for ref in [r for r in self.chunks if r.rsplit(":", 1)[0] == doc_id]:
            del self.chunks[ref]

    # --- retrieval ---------------------------------------------------------------

    def _apply_filters(self, refs: list[str], filters: dict[str, str] | None) -> list[str]:
        if not filters:
            return refs
        out = []
        for ref in refs:
            meta = self.chunks[ref].metadata if ref in self.chunks else {}
            if all(meta.get(field) == value for field, value in filters.items()):
                out.append(ref)
        return out

    def _sparse_ranking(self, query_text: str, depth: int,
                        filters: dict[str, str] | None) -> list[sparse.SearchHit]:
        ast = q.parse_query(query_text)
        if filters:
            extra = tuple(q.FieldFilter(f, v) for f, v in sorted(filters.items()))
            ast = q.And((ast,) + extra)
        total, hits = sparse.search(self.sparse_index, ast, k=depth, page=0,
                                    chunk_texts=self.chunk_texts())
        return hits

    def _dense_ranking(self, query_text: str, depth: int,
                       filters: dict[str, str] | None):
        fetch = depth * (CANDIDATE_DEPTH_FACTOR if filters else 1)
        hits = self.dense_store.search_text(query_text, k=min(fetch, len(self.chunks)))
        refs = self._apply_filters([h.chunk_ref for h in hits], filters)
        by_ref = {h.chunk_ref: h for h in hits}
        return [by_ref[r] for r in refs][:depth]

    def hybrid_search(self, query_text: str, k: int, mode: str = "hybrid",
                      filters: dict[str, str] | None = None) -> list[HybridHit]:
        """Retrieve top-k chunks in sparse, dense, or fused hybrid mode."""
        if k <= 0:
            raise ValueError("k must be positive")
        if mode not in ("sparse", "dense", "hybrid"):
            raise ValueError(f"unknown mode {mode!r}")
        if not self.chunks:
            raise EmptyStoreError("store is empty")

        if mode == "sparse":
            hits = self._sparse_ranking(query_text, k, filters)
            return [HybridHit(chunk_ref=h.chunk_ref, fused_score=h.score,
                              sparse_rank=i + 1, sparse_score=h.score,
                              highlights=h.highlights)
                    for i, h in enumerate(hits)]

        if mode == "dense":
            hits = self._dense_ranking(query_text, k, filters)
            return [HybridHit(chunk_ref=h.chunk_ref,
                              fused_score=1.0 - h.distance,
                              dense_rank=i + 1, dense_distance=h.distance)
                    for i, h in enumerate(hits)]

        depth = CANDIDATE_DEPTH_FACTOR * k
        sparse_hits = self._sparse_ranking(query_text, depth, filters)
        dense_hits = self._dense_ranking(query_text, depth, filters)
        sparse_by_ref = {h.chunk_ref: (i + 1, h) for i, h in enumerate(sparse_hits)}
        dense_by_ref = {h.chunk_ref: (i + 1, h) for i, h in enumerate(dense_hits)}
        fused = rrf_fuse([[h.chunk_ref for h in sparse_hits],
                          [h.chunk_ref for h in dense_hits]])
        out = []
        for ref, score in fused[:k]:
            s = sparse_by_ref.get(ref)
            d = dense_by_ref.get(ref)
            out.append(HybridHit(
                chunk_ref=ref,
                fused_score=score,
                sparse_rank=s[0] if s else None,
                dense_rank=d[0] if d else None,
                sparse_score=s[1].score if s else None,
                dense_distance=d[1].distance if d else None,
                highlights=s[1].highlights if s else (),
            ))
        return out

    # --- persistence ----------------------------------------------------------

    def save(self, root: str | Path) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        save_documents(sorted(self.documents.values(), key=lambda r: r.source_path),
                       root / "documents.jsonl")
        save_chunks(sorted(self.chunks.values(),
                           key=lambda c: (c.doc_id, c.chunk_index)),
                    root / "chunks.jsonl")
        self.sparse_index.save(root / "sparse_index.json")
        self.dense_store.save(root / "dense_index.json")
        manifest = {
            "version": MANIFEST_VERSION,
            "documents": "documents.jsonl",
            "chunks": "chunks.jsonl",
            "sparse_index": "sparse_index.json",
            "dense_index": "dense_index.json",
            "chunking": {"chunk_size_words": self.chunking.chunk_size_words,
                         "overlap_words": self.chunking.overlap_words,
                         "unit": self.chunking.unit},
            "embedder": _embedder_config(self.embedder),
        }
        with open(root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, root: str | Path) -> "DualStore":
        root = Path(root)
        with open(root / "manifest.json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("version") != MANIFEST_VERSION:
            raise DualStoreError(
                f"unsupported manifest version: {manifest.get('version')!r}")
        chunking = ChunkingConfig(**manifest["chunking"])
        embedder = _embedder_from_config(manifest["embedder"])
        store = cls(embedder=embedder, chunking=chunking)
        store.documents = {r.doc_id: r for r in
                           load_documents(root / manifest["documents"])}
        store.chunks = {c.chunk_ref: c for c in
                        load_chunks(root / manifest["chunks"])}
        store.sparse_index = sparse.InvertedIndex.load(root / manifest["sparse_index"])
        store.dense_store.load_index(root / manifest["dense_index"])
        return store


def _embedder_config(embedder) -> dict:
    if isinstance(embedder, HashedNgramEmbedder):
        return {"kind": "hashed_ngram", "dim": embedder.dim,
                "n": embedder.n, "seed": embedder.seed}
    return {"kind": type(embedder).__name__, "dim": embedder.dim}


def _embedder_from_config(cfg: dict):
    if cfg["kind"] == "hashed_ngram":
        return HashedNgramEmbedder(dim=cfg["dim"], n=cfg["n"], seed=cfg["seed"])
    raise DualStoreError(f"cannot reconstruct embedder of kind {cfg['kind']!r}")
