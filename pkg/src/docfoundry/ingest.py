"""Document loading, normalization, and chunking.

Documents are loaded from a directory tree, normalized into immutable
records, and split into overlapping word-window chunks and finer units
(sentences / paragraphs / passages). A "word" is a maximal run of
non-whitespace characters, so chunking is model-independent and
reproducible.
"""

from __future__ import annotations

import fnmatch
import hashlib
import html.parser
import io
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

logger = logging.getLogger(__name__)

SUPPORTED_EXTENSIONS = (".txt", ".md", ".html", ".csv")


class IngestError(Exception):
    """Raised for fatal ingestion failures (e.g. missing directory)."""


@dataclass(frozen=True)
class DocumentRecord:
    """One ingested document: normalized text plus provenance metadata."""

    doc_id: str
    source_path: str
    text: str
    metadata: dict[str, str]
    content_hash: str
    ingested_at: str  # UTC ISO-8601

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_path": self.source_path,
            "text": self.text,
            "metadata": dict(self.metadata),
            "content_hash": self.content_hash,
            "ingested_at": self.ingested_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DocumentRecord":
        return cls(
            doc_id=obj["doc_id"],
            source_path=obj["source_path"],
            text=obj["text"],
            metadata=dict(obj["metadata"]),
            content_hash=obj["content_hash"],
            ingested_at=obj["ingested_at"],
        )


@dataclass(frozen=True)
class Chunk:
    """A contiguous word window of a document; the unit all stores index."""

    doc_id: str
    chunk_index: int
    text: str
    start_word: int
    end_word: int
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def chunk_ref(self) -> str:
        return f"{self.doc_id}:{self.chunk_index}"

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "chunk_index": self.chunk_index,
            "text": self.text,
            "start_word": self.start_word,
            "end_word": self.end_word,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Chunk":
        return cls(
            doc_id=obj["doc_id"],
            chunk_index=obj["chunk_index"],
            text=obj["text"],
            start_word=obj["start_word"],
            end_word=obj["end_word"],
            metadata=dict(obj["metadata"]),
        )


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size_words: int = 300
    overlap_words: int = 50
    unit: str = "passage"  # sentence | paragraph | passage

    def __post_init__(self):
        if self.chunk_size_words <= 0:
            raise ValueError("chunk_size_words must be positive")
        if self.overlap_words < 0:
            raise ValueError("overlap_words must be non-negative")
        if self.overlap_words >= self.chunk_size_words:
            raise ValueError("overlap_words must be smaller than chunk_size_words")
        if self.unit not in ("sentence", "paragraph", "passage"):
            raise ValueError(f"unknown unit {self.unit!r}")


def content_hash(data: bytes) -> str:
    """SHA-256 hex digest of raw bytes (64 hex chars)."""
    return hashlib.sha256(data).hexdigest()


def make_doc_id(source_path: str, digest: str) -> str:
    """Stable id derived from (source_path, content_hash)."""
    return hashlib.sha256(f"{source_path}\n{digest}".encode("utf-8")).hexdigest()[:16]


class _TagStripper(html.parser.HTMLParser):
    """Collects text content, dropping tags, scripts, and styles."""

    _SKIP = {"script", "style"}

    def __init__(self):
        super().__init__()
        self._parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth > 0:
            self._skip_depth -= 1

    def handle_data(self, data):
        if self._skip_depth == 0:
            self._parts.append(data)

    def text(self) -> str:
        return " ".join(p for p in self._parts if p.strip())


def strip_html(raw: str) -> str:
    parser = _TagStripper()
    parser.feed(raw)
    return parser.text()


def normalize_text(raw: str) -> str:
    """Normalize newlines to \\n and strip trailing whitespace per line."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    return "\n".join(lines).strip("\n")


def load_file(root: Path, rel_path: str, extra_metadata: dict[str, str] | None = None,
              now: str | None = None) -> DocumentRecord:
    """Load a single file under ``root`` into a DocumentRecord.

    Raises IngestError for unreadable files or documents that are empty
    after normalization.
    """
    full = root / rel_path
    try:
        raw = full.read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read {rel_path}: {exc}") from exc

    digest = content_hash(raw)
    text = raw.decode("utf-8", errors="replace")
    if full.suffix.lower() in (".html", ".htm"):
        text = strip_html(text)
    text = normalize_text(text)
    if not text.strip():
        raise IngestError(f"document {rel_path} is empty after normalization")

    metadata = {
        "extension": full.suffix.lower().lstrip("."),
        "size_bytes": str(len(raw)),
    }
    if extra_metadata:
        metadata.update(extra_metadata)

    return DocumentRecord(
        doc_id=make_doc_id(rel_path, digest),
        source_path=rel_path,
        text=text,
        metadata=metadata,
        content_hash=digest,
        ingested_at=now or datetime.now(timezone.utc).isoformat(),
    )


def load_directory(path: str | Path, include_globs: list[str] | None = None,
                   extra_metadata: dict[str, str] | None = None,
                   now: str | None = None) -> tuple[list[DocumentRecord], list[str]]:
    """Load all matching readable files under ``path``.

    Returns (records, failures). Records are ordered deterministically by
    source_path; unreadable or empty files land in ``failures`` as
    human-readable reasons instead of aborting the load. An empty result
    is not an error.
    """
    root = Path(path)
    if not root.is_dir():
        raise IngestError(f"directory not found: {root}")

    rel_paths = []
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(root).as_posix()
        if include_globs:
            if not any(fnmatch.fnmatch(rel, g) or fnmatch.fnmatch(p.name, g)
                       for g in include_globs):
                continue
        elif p.suffix.lower() not in SUPPORTED_EXTENSIONS:
            continue
        rel_paths.append(rel)

    records: list[DocumentRecord] = []
    failures: list[str] = []
    for rel in sorted(rel_paths):
        try:
            records.append(load_file(root, rel, extra_metadata, now=now))
        except IngestError as exc:
            logger.warning("skipping %s: %s", rel, exc)
            failures.append(str(exc))
    return records, failures


def iter_word_spans(text: str):
    """Yield (start_char, end_char) spans of maximal non-whitespace runs."""
    for m in re.finditer(r"\S+", text):
        yield m.span()


def chunk_document(doc: DocumentRecord, cfg: ChunkingConfig | None = None) -> list[Chunk]:
    """Split a document into overlapping word windows.

    Windows have width ``chunk_size_words`` and advance by
    ``chunk_size_words - overlap_words``; the final partial window is
    emitted if non-empty. The union of [start, end) ranges covers every
    word, and consecutive chunks overlap by exactly ``overlap_words``
    except possibly the last.
    """
    cfg = cfg or ChunkingConfig()
    spans = list(iter_word_spans(doc.text))
    n_words = len(spans)
    if n_words == 0:
        return []

    step = cfg.chunk_size_words - cfg.overlap_words
    chunks: list[Chunk] = []
    start = 0
    index = 0
    while start < n_words:
        end = min(start + cfg.chunk_size_words, n_words)
        char_start = spans[start][0]
        char_end = spans[end - 1][1]
        chunks.append(Chunk(
            doc_id=doc.doc_id,
            chunk_index=index,
            text=doc.text[char_start:char_end],
            start_word=start,
            end_word=end,
            metadata={**doc.metadata, "source_path": doc.source_path},
        ))
        index += 1
        if end >= n_words:
            break
        start += step
    return chunks


_SENTENCE_BOUNDARY = re.compile(r"(?<=[.?!])\s+(?=[A-Z0-9])")


def segment_units(text: str, unit: str,
                  cfg: ChunkingConfig | None = None) -> list[tuple[int, int]]:
    """Split text into unit spans as (start_char, end_char) pairs.

    sentence: split after [.?!] followed by whitespace and an uppercase
    letter or digit. paragraph: split on blank lines. passage: the
    chunk_document windows rendered as char spans. Spans are ordered,
    disjoint for sentence/paragraph, never split inside a word, and cover
    all non-whitespace text.
    """
    if unit not in ("sentence", "paragraph", "passage"):
        raise ValueError(f"unknown unit {unit!r}")
    if not text.strip():
        return []

    if unit == "sentence":
        spans = []
        cursor = 0
        for m in _SENTENCE_BOUNDARY.finditer(text):
            spans.append((cursor, m.start()))
            cursor = m.end()
        spans.append((cursor, len(text)))
        return [_trim_span(text, s, e) for s, e in spans if text[s:e].strip()]

    if unit == "paragraph":
        spans = []
        cursor = 0
        for m in re.finditer(r"\n\s*\n", text):
            spans.append((cursor, m.start()))
            cursor = m.end()
        spans.append((cursor, len(text)))
        return [_trim_span(text, s, e) for s, e in spans if text[s:e].strip()]

    # passage: reuse the chunking windows
    cfg = cfg or ChunkingConfig()
    word_spans = list(iter_word_spans(text))
    step = cfg.chunk_size_words - cfg.overlap_words
    spans = []
    start = 0
    while start < len(word_spans):
        end = min(start + cfg.chunk_size_words, len(word_spans))
        spans.append((word_spans[start][0], word_spans[end - 1][1]))
        if end >= len(word_spans):
            break
        start += step
    return spans


def _trim_span(text: str, start: int, end: int) -> tuple[int, int]:
    """Shrink a span to exclude leading/trailing whitespace."""
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return (start, end)


# --- JSON-lines persistence -------------------------------------------------

def save_documents(records: list[DocumentRecord], path: str | Path) -> None:
    """Persist records as JSON-lines, one DocumentRecord per line."""
    with io.open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def load_documents(path: str | Path) -> list[DocumentRecord]:
    records = []
    with io.open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(DocumentRecord.from_json(json.loads(line)))
    return records


def save_chunks(chunks: list[Chunk], path: str | Path) -> None:
    """Persist chunks as JSON-lines keyed by (doc_id, chunk_index)."""
    with io.open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_json(), sort_keys=True) + "\n")


def load_chunks(path: str | Path) -> list[Chunk]:
    chunks = []
    with io.open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                chunks.append(Chunk.from_json(json.loads(line)))
    return chunks
