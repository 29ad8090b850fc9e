"""Document-intelligence workflows over the stores and LLM backends.

Every pipeline's backend call count equals its CallLog delta, so runs
are auditable after the fact. Backend calls execute serially in
deterministic unit/chunk order.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass

import numpy as np

from .dual import DualStore, EmptyStoreError
from .embeddings import cosine_similarity
from .ingest import Chunk, ChunkingConfig, DocumentRecord, chunk_document, segment_units
from .llm import ChatMessage, LlmClient, render_template
from .structured import (ExtractionFailedError, RecordSchema, ValidationReport,
                         extract_structured)

SNIPPET_CHARS = 300

# Small fixed stopword list for the content-word overlap check; kept tiny
# and auditable on purpose.
STOPWORDS = frozenset("""
a an and are as at be but by for from had has have he her his i if in is it
its not of on or she so that the their them they this to was were will with
you your
""".split())


class PipelineError(Exception):
    pass


class UnknownChunkError(PipelineError):
    pass


# --- summarization -----------------------------------------------------------

DIRECT_PROMPT = ("Summarize the following document in at most {budget} words:"
                 "\n\n{text}")
MAP_PROMPT = "Summarize the following passage concisely:\n\n{text}"
REDUCE_PROMPT = ("Combine the following partial summaries into a single "
                 "summary of at most {budget} words:\n\n{text}")


@dataclass(frozen=True)
class SummaryResult:
    summary: str
    map_call_count: int
    reduce_call_count: int
    chunk_refs: tuple[str, ...]
    skipped_chunk_refs: tuple[str, ...] = ()
    no_relevant_content: bool = False

    @property
    def llm_call_count(self) -> int:
        """Total backend calls: the CallLog delta for the run."""
        if self.no_relevant_content:
            return 0
        if self.map_call_count == 0 and self.reduce_call_count == 0:
            return 1  # single direct call
        return self.map_call_count + self.reduce_call_count

    def to_json(self) -> dict:
        return {"summary": self.summary,
                "map_call_count": self.map_call_count,
                "reduce_call_count": self.reduce_call_count,
                "llm_call_count": self.llm_call_count,
                "chunk_refs": list(self.chunk_refs),
                "skipped_chunk_refs": list(self.skipped_chunk_refs),
                "no_relevant_content": self.no_relevant_content}


def _word_count(text: str) -> int:
    return len(text.split())


def summarize_map_reduce(client: LlmClient, doc: DocumentRecord,
                         cfg: ChunkingConfig | None = None,
                         word_budget: int = 150,
                         chunks: list[Chunk] | None = None) -> SummaryResult:
    """Map-reduce summarization for large documents.

    Single-chunk documents get one direct call (map and reduce counts
    stay zero). Otherwise each chunk is summarized (map), and the
    concatenated summaries are collapsed with further calls (reduce)
    until they fit one chunk window. Whitespace-only chunks are skipped
    and noted.
    """
    if word_budget <= 0:
        raise ValueError("word_budget must be positive")
    cfg = cfg or ChunkingConfig()
    if chunks is None:
        chunks = chunk_document(doc, cfg)
    if not chunks:
        raise PipelineError(f"document {doc.doc_id} has no chunks")

    usable = [c for c in chunks if c.text.strip()]
    skipped = tuple(c.chunk_ref for c in chunks if not c.text.strip())

    if len(usable) == 1:
        prompt = render_template(DIRECT_PROMPT,
                                 {"budget": str(word_budget),
                                  "text": usable[0].text})
        summary = client.complete(prompt).text
        return SummaryResult(summary=summary, map_call_count=0,
                             reduce_call_count=0,
                             chunk_refs=(usable[0].chunk_ref,),
                             skipped_chunk_refs=skipped)

    map_summaries = []
    for chunk in usable:
        prompt = render_template(MAP_PROMPT, {"text": chunk.text})
        map_summaries.append(client.complete(prompt).text)

    combined = "\n\n".join(map_summaries)
    reduce_calls = 0
    window = cfg.chunk_size_words
    while _word_count(combined) > window:
        words = combined.split()
        pieces = [" ".join(words[i:i + window])
                  for i in range(0, len(words), window)]
        partials = []
        for piece in pieces:
            prompt = render_template(REDUCE_PROMPT,
                                     {"budget": str(word_budget), "text": piece})
            partials.append(client.complete(prompt).text)
            reduce_calls += 1
        combined = "\n\n".join(partials)
    prompt = render_template(REDUCE_PROMPT,
                             {"budget": str(word_budget), "text": combined})
    summary = client.complete(prompt).text
    reduce_calls += 1

    return SummaryResult(summary=summary, map_call_count=len(usable),
                         reduce_call_count=reduce_calls,
                         chunk_refs=tuple(c.chunk_ref for c in usable),
                         skipped_chunk_refs=skipped)


def summarize_concept(client: LlmClient, embedder, doc: DocumentRecord,
                      concept: str, cfg: ChunkingConfig | None = None,
                      min_similarity: float = 0.3, word_budget: int = 150,
                      chunks: list[Chunk] | None = None) -> SummaryResult:
    """Concept-focused summarization: filter chunks by embedding
    similarity to the concept, then map-reduce over the survivors.

    When no chunk reaches min_similarity the result is a distinguished
    no-relevant-content summary with zero backend calls, not an error.
    """
    if not concept.strip():
        raise ValueError("concept must be non-empty")
    cfg = cfg or ChunkingConfig()
    if chunks is None:
        chunks = chunk_document(doc, cfg)
    concept_vec = embedder.embed(concept)
    selected = [c for c in chunks
                if cosine_similarity(concept_vec, embedder.embed(c.text))
                >= min_similarity]
    if not selected:
        return SummaryResult(summary="", map_call_count=0, reduce_call_count=0,
                             chunk_refs=(), no_relevant_content=True)
    return summarize_map_reduce(client, doc, cfg, word_budget, chunks=selected)


# --- per-unit extraction ------------------------------------------------------

@dataclass(frozen=True)
class ExtractionRow:
    doc_id: str
    unit_index: int
    unit_text: str
    record: dict | None
    attempts_used: int
    error: ValidationReport | None = None

    @property
    def ok(self) -> bool:
        return self.record is not None

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "unit_index": self.unit_index,
                "unit_text": self.unit_text, "record": self.record,
                "attempts_used": self.attempts_used,
                "error": self.error.to_json() if self.error else None}


def extract_over_units(client: LlmClient, doc: DocumentRecord, unit: str,
                       prompt_template: str, schema: RecordSchema,
                       attempt_fix: bool = True,
                       max_attempts: int = 3) -> list[ExtractionRow]:
    """Apply a structured-extraction prompt to every unit of a document.

    Rows come back in unit order; a unit whose repair loop exhausts is
    recorded with its final ValidationReport and never aborts the batch.
    Only systemic backend errors (unreachable, script exhausted)
    propagate.
    """
    if "{unit_text}" not in prompt_template:
        raise ValueError("prompt_template must contain {unit_text}")
    spans = segment_units(doc.text, unit)
    rows: list[ExtractionRow] = []
    for i, (start, end) in enumerate(spans):
        unit_text = doc.text[start:end]
        rendered = render_template(prompt_template, {"unit_text": unit_text})
        try:
            record, attempts = extract_structured(
                client, rendered, schema, attempt_fix=attempt_fix,
                max_attempts=max_attempts)
            rows.append(ExtractionRow(doc_id=doc.doc_id, unit_index=i,
                                      unit_text=unit_text, record=record,
                                      attempts_used=attempts))
        except ExtractionFailedError as exc:
            rows.append(ExtractionRow(doc_id=doc.doc_id, unit_index=i,
                                      unit_text=unit_text, record=None,
                                      attempts_used=exc.attempts_used,
                                      error=exc.report))
    return rows


def export_rows_csv(rows: list[ExtractionRow], schema: RecordSchema) -> bytes:
    """RFC-4180 CSV export of extraction rows (UTF-8).

    Header: doc_id, unit_index, unit_text, one column per schema field,
    attempts_used, error.
    """
    buf = io.StringIO()
    writer = csv.writer(buf)
    field_names = [f.name for f in schema.fields]
    writer.writerow(["doc_id", "unit_index", "unit_text", *field_names,
                     "attempts_used", "error"])
    for row in rows:
        record = row.record or {}
        values = []
        for name in field_names:
            value = record.get(name, "")
            if isinstance(value, list):
                value = "; ".join(str(v) for v in value)
            values.append(value)
        error = ""
        if row.error is not None:
            error = "; ".join(f"{p}: {m}" for p, m in row.error.errors)
        writer.writerow([row.doc_id, row.unit_index, row.unit_text,
                         *values, row.attempts_used, error])
    return buf.getvalue().encode("utf-8")


# --- few-shot classification ---------------------------------------------------

@dataclass(frozen=True)
class FewShotModel:
    centroids: dict[str, np.ndarray]
    embedder_id: str
    counts: dict[str, int]


def fewshot_train(embedder, examples: list[tuple[str, str]]) -> FewShotModel:
    """Nearest-centroid classifier from (text, label) examples.

    Each label's centroid is the L2-normalized mean of its example
    embeddings; needs at least two distinct labels with one example each.
    """
    if not examples:
        raise ValueError("examples must be non-empty")
    by_label: dict[str, list[np.ndarray]] = {}
    for text, label in examples:
        by_label.setdefault(label, []).append(embedder.embed(text))
    if len(by_label) < 2:
        raise ValueError("need at least two distinct labels")
    centroids = {}
    for label, vectors in by_label.items():
        mean = np.mean(vectors, axis=0)
        norm = float(np.linalg.norm(mean))
        centroids[label] = mean / norm if norm > 0 else mean
    return FewShotModel(centroids=centroids,
                        embedder_id=_embedder_id(embedder),
                        counts={label: len(v) for label, v in by_label.items()})


def fewshot_predict(model: FewShotModel, embedder, text: str) -> tuple[str, float]:
    """Label of the nearest centroid by cosine similarity.

    Ties (including the zero-vector case, where every similarity is 0)
    break toward the lexicographically smallest label.
    """
    vec = embedder.embed(text)
    best_label, best_score = None, None
    for label in sorted(model.centroids):
        score = cosine_similarity(vec, model.centroids[label])
        if best_score is None or score > best_score:
            best_label, best_score = label, score
    return best_label, best_score


def _embedder_id(embedder) -> str:
    parts = [type(embedder).__name__, str(getattr(embedder, "dim", "?"))]
    for attr in ("n", "seed"):
        if hasattr(embedder, attr):
            parts.append(str(getattr(embedder, attr)))
    return ":".join(parts)


# --- cited question answering ---------------------------------------------------

ASK_PROMPT = (
    "Answer the question using only the numbered sources below. "
    "If the sources are insufficient to answer, say so explicitly.\n\n"
    "{sources}\n\nQuestion: {question}\nAnswer:")


@dataclass(frozen=True)
class SourceCitation:
    chunk_ref: str
    score: float
    snippet: str

    def to_json(self) -> dict:
        return {"chunk_ref": self.chunk_ref, "score": self.score,
                "snippet": self.snippet}


@dataclass(frozen=True)
class AnswerWithSources:
    answer: str
    sources: tuple[SourceCitation, ...]
    retrieval_mode: str

    def to_json(self) -> dict:
        return {"answer": self.answer,
                "sources": [s.to_json() for s in self.sources],
                "retrieval_mode": self.retrieval_mode}


def ask(client: LlmClient, store: DualStore, question: str, k: int = 4,
        mode: str = "hybrid") -> AnswerWithSources:
    """Retrieval-augmented answer with scored, verifiable citations.

    The prompt contains the top-k retrieved snippets as numbered sources
    plus an instruction to answer only from them; sources are returned
    with their retrieval scores in retrieval order.
    """
    if not store.chunks:
        raise EmptyStoreError("store is empty")
    hits = store.hybrid_search(question, k=k, mode=mode)
    texts = store.chunk_texts()
    sources = tuple(SourceCitation(chunk_ref=h.chunk_ref, score=h.fused_score,
                                   snippet=texts[h.chunk_ref][:SNIPPET_CHARS])
                    for h in hits)
    numbered = "\n".join(f"[{i + 1}] {s.snippet}"
                         for i, s in enumerate(sources))
    prompt = render_template(ASK_PROMPT,
                             {"sources": numbered, "question": question})
    answer = client.complete(prompt).text
    return AnswerWithSources(answer=answer, sources=sources,
                             retrieval_mode=mode)


# --- grounding verification -----------------------------------------------------

@dataclass(frozen=True)
class SentenceVerdict:
    sentence: str
    supported: bool
    overlap: float

    def to_json(self) -> dict:
        return {"sentence": self.sentence, "supported": self.supported,
                "overlap": self.overlap}


@dataclass(frozen=True)
class GroundingReport:
    snippets_verbatim: bool
    sentences: tuple[SentenceVerdict, ...]

    @property
    def unsupported(self) -> tuple[str, ...]:
        return tuple(v.sentence for v in self.sentences if not v.supported)

    @property
    def ok(self) -> bool:
        return self.snippets_verbatim and not self.unsupported

    def to_json(self) -> dict:
        return {"snippets_verbatim": self.snippets_verbatim,
                "sentences": [v.to_json() for v in self.sentences],
                "unsupported": list(self.unsupported),
                "ok": self.ok}


def content_words(text: str) -> set[str]:
    """Lowercased alphanumeric tokens minus stopwords."""
    return {w for w in re.findall(r"[0-9a-z]+", text.lower())
            if w not in STOPWORDS}


def verify_grounding(answer: AnswerWithSources, store,
                     threshold: float = 0.5) -> GroundingReport:
    """Automated check that the answer is supported by its citations.

    (a) every snippet must be a verbatim substring of its stored chunk;
    (b) every answer sentence is tagged supported/unsupported by
    content-word overlap (>= threshold against some cited chunk).
    Sentences with no content words are vacuously supported.
    """
    texts = store.chunk_texts() if hasattr(store, "chunk_texts") else dict(store)
    snippets_ok = True
    for source in answer.sources:
        if source.chunk_ref not in texts:
            raise UnknownChunkError(f"unknown chunk_ref: {source.chunk_ref}")
        if source.snippet not in texts[source.chunk_ref]:
            snippets_ok = False
    cited_words = [content_words(texts[s.chunk_ref]) for s in answer.sources]
    verdicts = []
    for start, end in segment_units(answer.answer, "sentence"):
        sentence = answer.answer[start:end]
        words = content_words(sentence)
        if not words:
            verdicts.append(SentenceVerdict(sentence, True, 1.0))
            continue
        overlap = max((len(words & chunk_words) / len(words)
                       for chunk_words in cited_words), default=0.0)
        verdicts.append(SentenceVerdict(sentence, overlap >= threshold, overlap))
    return GroundingReport(snippets_verbatim=snippets_ok,
                           sentences=tuple(verdicts))


# --- chat sessions ----------------------------------------------------------------

@dataclass(frozen=True)
class ChatSession:
    session_id: str
    history: tuple[ChatMessage, ...] = ()
    created_at: str = ""
    corpus_id: str | None = None

    def with_turn(self, user: ChatMessage, assistant: ChatMessage) -> "ChatSession":
        return ChatSession(session_id=self.session_id,
                           history=self.history + (user, assistant),
                           created_at=self.created_at,
                           corpus_id=self.corpus_id)


def select_context(history: tuple[ChatMessage, ...], new_message: ChatMessage,
                   budget_chars: int) -> list[ChatMessage]:
    """Longest history suffix plus the new message fitting the budget.

    The newest message is always included; the suffix must start at a
    user message so the transmitted conversation alternates correctly.
    The budget counts message content characters.
    """
    full = list(history) + [new_message]
    for start in range(0, len(full), 2):  # user messages sit at even offsets
        if sum(len(m.content) for m in full[start:]) <= budget_chars:
            return full[start:]
    return [new_message]


def chat_turn(client: LlmClient, session: ChatSession, user_message: str,
              context_budget_chars: int = 8000) -> tuple[str, ChatSession]:
    """One conversation turn; backend errors leave the session unchanged."""
    new = ChatMessage(role="user", content=user_message)
    window = select_context(session.history, new, context_budget_chars)
    reply = client.chat(window).text
    updated = session.with_turn(new, ChatMessage(role="assistant", content=reply))
    return reply, updated
