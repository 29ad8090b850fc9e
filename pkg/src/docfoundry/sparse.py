"""Inverted-index keyword store with BM25 ranking.

Tokens are maximal runs of letters/digits, optionally lowercased and
stopword-filtered. Scoring uses BM25 with k1=1.2, b=0.75 over the
positive Term/Phrase leaves of the query; boolean structure (AND / OR /
NOT / field:value) selects the candidate set. Ties are broken by
chunk_ref ascending for determinism.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from . import query as q
from .ingest import Chunk

BM25_K1 = 1.2
BM25_B = 0.75

INDEX_FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


class SparseStoreError(Exception):
    pass


class DuplicateChunkError(SparseStoreError):
    pass


class UnknownDocumentError(SparseStoreError):
    pass


@dataclass(frozen=True)
class AnalyzerConfig:
    lowercase: bool = True
    stopwords: frozenset[str] = frozenset()

    def tokens(self, text: str) -> list[str]:
        """Analyzed token stream: deterministic for identical text."""
        return [tok for tok, _, _ in self.tokens_with_spans(text)]

    def tokens_with_spans(self, text: str) -> list[tuple[str, int, int]]:
        """(token, start_char, end_char) for each kept token."""
        out = []
        for m in _TOKEN_RE.finditer(text):
            tok = m.group()
            if self.lowercase:
                tok = tok.lower()
            if tok in self.stopwords:
                continue
            out.append((tok, m.start(), m.end()))
        return out

    def to_json(self) -> dict:
        return {"lowercase": self.lowercase, "stopwords": sorted(self.stopwords)}

    @classmethod
    def from_json(cls, obj: dict) -> "AnalyzerConfig":
        return cls(lowercase=obj["lowercase"], stopwords=frozenset(obj["stopwords"]))


@dataclass(frozen=True)
class SearchHit:
    chunk_ref: str
    score: float
    highlights: tuple[tuple[int, int], ...] = ()
    matched_terms: tuple[str, ...] = ()
    bm25_score: float | None = None  # provenance when semantically re-ranked


@dataclass
class InvertedIndex:
    """Positional inverted index over chunks.

    postings[term] is a list of (chunk_ref, tf, positions) with positions
    strictly increasing within the analyzed token stream of the chunk;
    df[term] equals the number of distinct chunks in the postings;
    avgdl is the mean analyzed token count over all indexed chunks.
    """

    analyzer: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    postings: dict[str, list[tuple[str, int, list[int]]]] = field(default_factory=dict)
    fields: dict[str, dict[str, str]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)  # chunk_ref -> dl

    @property
    def N(self) -> int:
        return len(self.doc_lengths)

    @property
    def avgdl(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)

    @property
    def df(self) -> dict[str, int]:
        return {term: len(plist) for term, plist in self.postings.items()}

    def chunk_refs(self) -> set[str]:
        return set(self.doc_lengths)

    def add_chunks(self, chunks: list[Chunk]) -> None:
        """Index chunks; rejects duplicate (doc_id, chunk_index) keys."""
        for chunk in chunks:
            if chunk.chunk_ref in self.doc_lengths:
                raise DuplicateChunkError(f"chunk already indexed: {chunk.chunk_ref}")
        seen = set()
        for chunk in chunks:
            if chunk.chunk_ref in seen:
                raise DuplicateChunkError(f"duplicate chunk in batch: {chunk.chunk_ref}")
            seen.add(chunk.chunk_ref)
        for chunk in chunks:
            ref = chunk.chunk_ref
            tokens = self.analyzer.tokens(chunk.text)
            self.doc_lengths[ref] = len(tokens)
            per_term: dict[str, list[int]] = {}
            for pos, tok in enumerate(tokens):
                per_term.setdefault(tok, []).append(pos)
            for term, positions in per_term.items():
                self.postings.setdefault(term, []).append(
                    (ref, len(positions), positions))
            for key, value in chunk.metadata.items():
                self.fields.setdefault(key, {})[ref] = value
            self.fields.setdefault("doc_id", {})[ref] = chunk.doc_id

    def delete_document(self, doc_id: str) -> None:
        """Remove every chunk of a document and restore index invariants."""
        refs = {ref for ref in self.doc_lengths if ref.rsplit(":", 1)[0] == doc_id}
        if not refs:
            raise UnknownDocumentError(f"unknown doc_id: {doc_id}")
        for ref in refs:
            del self.doc_lengths[ref]
        for term in list(self.postings):
            kept = [p for p in self.postings[term] if p[0] not in refs]
            if kept:
                self.postings[term] = kept
            else:
                del self.postings[term]
        for key in list(self.fields):
            for ref in refs:
                self.fields[key].pop(ref, None)
            if not self.fields[key]:
                del self.fields[key]

    # --- boolean evaluation ------------------------------------------------

    def _term_postings(self, text: str) -> dict[str, tuple[int, list[int]]]:
        """chunk_ref -> (tf, positions) for one analyzed query term."""
        toks = self.analyzer.tokens(text)
        if len(toks) != 1:
            return {}
        return {ref: (tf, pos) for ref, tf, pos in self.postings.get(toks[0], [])}

    def _phrase_occurrences(self, words: tuple[str, ...]) -> dict[str, int]:
        """chunk_ref -> number of exact adjacent-position phrase matches."""
        analyzed: list[str] = []
        for w in words:
            analyzed.extend(self.analyzer.tokens(w))
        if not analyzed:
            return {}
        if len(analyzed) == 1:
            return {ref: tf for ref, (tf, _) in self._term_postings(analyzed[0]).items()}
        maps = []
        for tok in analyzed:
            plist = self.postings.get(tok)
            if not plist:
                return {}
            maps.append({ref: positions for ref, _, positions in plist})
        common = set(maps[0])
        for m in maps[1:]:
            common &= set(m)
        counts: dict[str, int] = {}
        for ref in common:
            first = maps[0][ref]
            n = 0
            for p in first:
                if all((p + i) in _as_set(maps[i], ref) for i in range(1, len(maps))):
                    n += 1
            if n:
                counts[ref] = n
        return counts

    def evaluate(self, node: q.Node) -> set[str]:
        """Candidate chunk_refs matching the boolean query."""
        if isinstance(node, q.Term):
            return set(self._term_postings(node.text))
        if isinstance(node, q.Phrase):
            return set(self._phrase_occurrences(node.words))
        if isinstance(node, q.FieldFilter):
            values = self.fields.get(node.field, {})
            return {ref for ref, v in values.items() if v == node.value}
        if isinstance(node, q.Or):
            out: set[str] = set()
            for child in node.children:
                out |= self.evaluate(child)
            return out
        if isinstance(node, q.And):
            positives = [c for c in node.children if not isinstance(c, q.Not)]
            negatives = [c for c in node.children if isinstance(c, q.Not)]
            result: set[str] | None = None
            for child in positives:
                matched = self.evaluate(child)
                result = matched if result is None else (result & matched)
            assert result is not None  # pure negation rejected at parse time
            for neg in negatives:
                result -= self.evaluate(neg.child)
            return result
        if isinstance(node, q.Not):
            raise q.PureNegationError("NOT outside an AND cannot be evaluated")
        raise TypeError(f"not a query node: {node!r}")

    # --- BM25 scoring --------------------------------------------------------

    def _idf(self, df: int) -> float:
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def _bm25_component(self, tf: int, dl: int, df: int) -> float:
        if tf == 0 or df == 0:
            return 0.0
        norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avgdl)
        return self._idf(df) * tf / (tf + norm)

    def score(self, ast: q.Node, candidates: set[str]) -> dict[str, float]:
        """BM25 score per candidate over the positive Term/Phrase leaves.

        Duplicate leaves contribute once.
        """
        leaves = []
        seen = set()
        for leaf in q.iter_positive_leaves(ast):
            if leaf not in seen:
                seen.add(leaf)
                leaves.append(leaf)
        scores = {ref: 0.0 for ref in candidates}
        for leaf in leaves:
            if isinstance(leaf, q.Term):
                occurrences = {ref: tf for ref, (tf, _) in
                               self._term_postings(leaf.text).items()}
            else:
                occurrences = self._phrase_occurrences(leaf.words)
            df = len(occurrences)
            for ref, tf in occurrences.items():
                if ref in scores:
                    scores[ref] += self._bm25_component(tf, self.doc_lengths[ref], df)
        return scores

    def matched_terms(self, ast: q.Node) -> tuple[str, ...]:
        """Analyzed positive leaf terms, for highlighting."""
        terms = []
        for leaf in q.iter_positive_leaves(ast):
            words = [leaf.text] if isinstance(leaf, q.Term) else list(leaf.words)
            for w in words:
                terms.extend(self.analyzer.tokens(w))
        return tuple(dict.fromkeys(terms))

    # --- persistence ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": INDEX_FORMAT_VERSION,
            "analyzer": self.analyzer.to_json(),
            "N": self.N,
            "avgdl": self.avgdl,
            "df": self.df,
            "postings": {t: [[ref, tf, pos] for ref, tf, pos in plist]
                         for t, plist in self.postings.items()},
            "fields": self.fields,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "InvertedIndex":
        if obj.get("version") != INDEX_FORMAT_VERSION:
            raise SparseStoreError(
                f"unsupported index version: {obj.get('version')!r}")
        index = cls(analyzer=AnalyzerConfig.from_json(obj["analyzer"]))
        index.postings = {t: [(ref, tf, list(pos)) for ref, tf, pos in plist]
                          for t, plist in obj["postings"].items()}
        index.fields = {k: dict(v) for k, v in obj["fields"].items()}
        # dl is derivable: every analyzed token of a chunk is some posting
        lengths: dict[str, int] = {}
        for plist in index.postings.values():
            for ref, tf, _ in plist:
                lengths[ref] = lengths.get(ref, 0) + tf
        # chunks whose tokens were all stopwords still count toward N
        for values in index.fields.values():
            for ref in values:
                lengths.setdefault(ref, 0)
        index.doc_lengths = lengths
        return index

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _as_set(positions_map: dict[str, list[int]], ref: str) -> set[int]:
    value = positions_map[ref]
    if not isinstance(value, set):
        value = set(value)
        positions_map[ref] = value  # memoize for repeated probes
    return value


def index_chunks(chunks: list[Chunk],
                 analyzer: AnalyzerConfig | None = None) -> InvertedIndex:
    """Build an index over a non-empty chunk list."""
    if not chunks:
        raise SparseStoreError("cannot index an empty chunk list")
    index = InvertedIndex(analyzer=analyzer or AnalyzerConfig())
    index.add_chunks(chunks)
    return index


def search(index: InvertedIndex, ast: q.Node, k: int, page: int = 0,
           chunk_texts: dict[str, str] | None = None) -> tuple[int, list[SearchHit]]:
    """Ranked boolean search: (total_matches, page of hits).

    Page p holds ranks [p*k, (p+1)*k). When chunk_texts is provided,
    highlight spans are attached to each returned hit.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if page < 0:
        raise ValueError("page must be non-negative")
    candidates = index.evaluate(ast)
    scores = index.score(ast, candidates)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    terms = index.matched_terms(ast)
    hits = []
    for ref, score in ranked[page * k:(page + 1) * k]:
        spans: tuple[tuple[int, int], ...] = ()
        if chunk_texts is not None and ref in chunk_texts:
            spans = tuple(highlight(chunk_texts[ref], terms, index.analyzer))
        hits.append(SearchHit(chunk_ref=ref, score=score,
                              highlights=spans, matched_terms=terms))
    return len(ranked), hits


def highlight(chunk_text: str, matched_terms,
              analyzer: AnalyzerConfig | None = None) -> list[tuple[int, int]]:
    """Char spans of every analyzed occurrence of each matched term.

    Spans are non-overlapping and sorted; terms are compared post-analysis
    so case-folded matches highlight the original surface form.
    """
    analyzer = analyzer or AnalyzerConfig()
    wanted = set(matched_terms)
    if not wanted:
        return []
    return [(start, end)
            for tok, start, end in analyzer.tokens_with_spans(chunk_text)
            if tok in wanted]


def rerank_semantic(hits: list[SearchHit], query_text: str, embedder,
                    chunk_texts: dict[str, str], m: int) -> list[SearchHit]:
    """Re-rank the top-m hits by query/chunk cosine similarity.

    Embeddings are computed at query time; the original BM25 score is
    retained in ``bm25_score``. Hits beyond the top m keep their order.
    """
    if m > len(hits):
        raise ValueError(f"m={m} exceeds hit count {len(hits)}")
    head, tail = hits[:m], hits[m:]
    query_vec = embedder.embed(query_text)
    rescored = []
    for hit in head:
        chunk_vec = embedder.embed(chunk_texts[hit.chunk_ref])
        sim = float(sum(a * b for a, b in zip(query_vec, chunk_vec)))
        rescored.append(SearchHit(
            chunk_ref=hit.chunk_ref,
            score=sim,
            highlights=hit.highlights,
            matched_terms=hit.matched_terms,
            bm25_score=hit.score if hit.bm25_score is None else hit.bm25_score,
        ))
    rescored.sort(key=lambda h: (-h.score, h.chunk_ref))
    return rescored + list(tail)
