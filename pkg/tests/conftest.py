import pytest

from docfoundry.ingest import Chunk, DocumentRecord, make_doc_id


def make_doc(text: str, source_path: str = "doc.txt",
             metadata: dict | None = None) -> DocumentRecord:
    digest = "0" * 64
    return DocumentRecord(doc_id=make_doc_id(source_path, digest),
                          source_path=source_path, text=text,
                          metadata=metadata or {}, content_hash=digest,
                          ingested_at="2026-01-01T00:00:00+00:00")


def make_chunks(texts: list[str], doc_id: str = "doc",
                metadata: dict | None = None) -> list[Chunk]:
    chunks = []
    for i, text in enumerate(texts):
        words = len(text.split())
        chunks.append(Chunk(doc_id=doc_id, chunk_index=i, text=text,
                            start_word=0, end_word=max(words, 1),
                            metadata=dict(metadata or {})))
    return chunks


@pytest.fixture
def fixture_corpus(tmp_path):
    """Two small documents with disjoint vocabularies."""
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "solar.txt").write_text(
        "The solar array produces clean energy. Panels convert sunlight "
        "into electric power. Inverters feed the grid.")
    (docs / "budget.md").write_text(
        "Budget figures for the fiscal year were revised upward. The "
        "committee approved new spending limits in March.")
    return docs
