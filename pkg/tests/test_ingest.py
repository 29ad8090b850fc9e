import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docfoundry.ingest import (Chunk, ChunkingConfig, DocumentRecord, IngestError,
                               chunk_document, content_hash, load_chunks,
                               load_directory, load_documents, save_chunks,
                               save_documents, segment_units)

from conftest import make_doc


# --- load_directory ----------------------------------------------------------

def test_single_file_identity(tmp_path):
    (tmp_path / "a.txt").write_text("hello world")
    records, failures = load_directory(tmp_path)
    assert len(records) == 1
    assert records[0].text == "hello world"
    assert failures == []


def test_glob_filter(tmp_path):
    (tmp_path / "a.txt").write_text("text")
    (tmp_path / "b.bin").write_bytes(b"\x00\x01")
    records, _ = load_directory(tmp_path, include_globs=["*.txt"])
    assert [r.source_path for r in records] == ["a.txt"]


def test_nested_source_path(tmp_path):
    sub = tmp_path / "sub"
    sub.mkdir()
    (sub / "c.md").write_text("nested doc")
    records, _ = load_directory(tmp_path)
    assert records[0].source_path == "sub/c.md"


def test_missing_directory():
    with pytest.raises(IngestError):
        load_directory("/nonexistent/path/here")


def test_empty_result_is_not_an_error(tmp_path):
    records, failures = load_directory(tmp_path)
    assert records == [] and failures == []


def test_empty_document_reported_not_fatal(tmp_path):
    (tmp_path / "empty.txt").write_text("   \n\n  ")
    (tmp_path / "ok.txt").write_text("content")
    records, failures = load_directory(tmp_path)
    assert [r.source_path for r in records] == ["ok.txt"]
    assert len(failures) == 1 and "empty" in failures[0]


def test_html_tag_stripping(tmp_path):
    (tmp_path / "page.html").write_text(
        "<html><head><style>p{color:red}</style></head>"
        "<body><p>visible text</p><script>var x=1;</script></body></html>")
    records, _ = load_directory(tmp_path)
    assert "visible text" in records[0].text
    assert "color:red" not in records[0].text
    assert "var x" not in records[0].text


def test_reingest_is_deterministic(tmp_path, fixture_corpus):
    first, _ = load_directory(fixture_corpus)
    second, _ = load_directory(fixture_corpus)
    assert [r.doc_id for r in first] == [r.doc_id for r in second]
    assert [r.content_hash for r in first] == [r.content_hash for r in second]
    cfg = ChunkingConfig(chunk_size_words=5, overlap_words=1)
    for a, b in zip(first, second):
        assert [c.to_json() for c in chunk_document(a, cfg)] == \
            [c.to_json() for c in chunk_document(b, cfg)]


def test_metadata_contains_extension_and_size(tmp_path):
    (tmp_path / "a.txt").write_text("hello")
    records, _ = load_directory(tmp_path)
    assert records[0].metadata["extension"] == "txt"
    assert records[0].metadata["size_bytes"] == "5"


def test_ordering_by_source_path(tmp_path):
    for name in ("z.txt", "a.txt", "m.txt"):
        (tmp_path / name).write_text(name)
    records, _ = load_directory(tmp_path)
    assert [r.source_path for r in records] == ["a.txt", "m.txt", "z.txt"]


# --- chunk_document -----------------------------------------------------------

def _words(n):
    return " ".join(f"w{i}" for i in range(n))


def test_chunk_shorter_than_window():
    chunks = chunk_document(make_doc(_words(100)), ChunkingConfig(300, 50))
    assert [(c.start_word, c.end_word) for c in chunks] == [(0, 100)]


def test_chunk_650_words():
    chunks = chunk_document(make_doc(_words(650)), ChunkingConfig(300, 50))
    assert [(c.start_word, c.end_word) for c in chunks] == \
        [(0, 300), (250, 550), (500, 650)]


def test_chunk_exact_fit():
    chunks = chunk_document(make_doc(_words(300)), ChunkingConfig(300, 50))
    assert [(c.start_word, c.end_word) for c in chunks] == [(0, 300)]


def test_chunk_text_matches_word_range():
    doc = make_doc(_words(650))
    for chunk in chunk_document(doc, ChunkingConfig(300, 50)):
        words = doc.text.split()
        assert chunk.text.split() == words[chunk.start_word:chunk.end_word]


def test_invalid_chunking_config():
    with pytest.raises(ValueError):
        ChunkingConfig(chunk_size_words=100, overlap_words=100)
    with pytest.raises(ValueError):
        ChunkingConfig(chunk_size_words=0)


@settings(max_examples=60, deadline=None)
@given(n_words=st.integers(1, 900),
       size=st.integers(2, 120),
       overlap_frac=st.floats(0.0, 0.95))
def test_chunk_coverage_and_overlap_property(n_words, size, overlap_frac):
    overlap = min(int(size * overlap_frac), size - 1)
    doc = make_doc(_words(n_words))
    chunks = chunk_document(doc, ChunkingConfig(size, overlap))
    covered = set()
    for c in chunks:
        covered |= set(range(c.start_word, c.end_word))
    assert covered == set(range(n_words))
    for a, b in zip(chunks, chunks[1:]):
        assert b.start_word == a.start_word + (size - overlap)
        if b is not chunks[-1]:
            assert a.end_word - b.start_word == overlap
    assert [c.chunk_index for c in chunks] == list(range(len(chunks)))


# --- segment_units --------------------------------------------------------------

def test_sentence_segmentation():
    text = "A cat. A dog."
    spans = segment_units(text, "sentence")
    assert [text[s:e] for s, e in spans] == ["A cat.", "A dog."]


def test_paragraph_segmentation():
    spans = segment_units("one\n\ntwo", "paragraph")
    assert len(spans) == 2


def test_segment_empty_text():
    assert segment_units("", "sentence") == []
    assert segment_units("   ", "paragraph") == []


def test_sentence_no_split_on_lowercase():
    text = "He said approx. three words. Then left."
    spans = segment_units(text, "sentence")
    assert [text[s:e] for s, e in spans] == \
        ["He said approx. three words.", "Then left."]


def test_passage_spans_match_chunk_windows():
    text = _words(650)
    spans = segment_units(text, "passage", ChunkingConfig(300, 50))
    assert len(spans) == 3
    assert text[spans[0][0]:spans[0][1]].split() == text.split()[0:300]


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd", "Zs"),
                                      whitelist_characters=".?!\n"),
               max_size=400),
       st.sampled_from(["sentence", "paragraph"]))
def test_segment_spans_never_split_words(text, unit):
    spans = segment_units(text, unit)
    for start, end in spans:
        assert start < end
        if start > 0 and not text[start - 1].isspace():
            assert text[start].isspace() or not text[start - 1].isalnum() \
                or not text[start].isalnum()
        # all non-whitespace text is covered
    covered = set()
    for start, end in spans:
        covered |= set(range(start, end))
    for i, ch in enumerate(text):
        if not ch.isspace():
            assert i in covered


# --- content_hash -----------------------------------------------------------------

def test_hash_deterministic():
    assert content_hash(b"abc") == content_hash(b"abc")


def test_hash_differs_on_one_byte():
    assert content_hash(b"abc") != content_hash(b"abd")


def test_hash_empty_input_matches_independent_digest():
    assert content_hash(b"") == hashlib.sha256(b"").hexdigest()
    assert len(content_hash(b"")) == 64


# --- JSON-lines persistence ----------------------------------------------------------

def test_document_jsonl_round_trip(tmp_path, fixture_corpus):
    records, _ = load_directory(fixture_corpus)
    path = tmp_path / "documents.jsonl"
    save_documents(records, path)
    loaded = load_documents(path)
    assert [r.to_json() for r in loaded] == [r.to_json() for r in records]
    line = path.read_text().splitlines()[0]
    assert set(json.loads(line)) == {"doc_id", "source_path", "text",
                                     "metadata", "content_hash", "ingested_at"}


def test_chunk_jsonl_round_trip(tmp_path):
    doc = make_doc(_words(650))
    chunks = chunk_document(doc, ChunkingConfig(300, 50))
    path = tmp_path / "chunks.jsonl"
    save_chunks(chunks, path)
    assert [c.to_json() for c in load_chunks(path)] == \
        [c.to_json() for c in chunks]
