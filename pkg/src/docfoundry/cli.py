"""Command-line surface: ingest, search, ask, summarize, extract,
classify, prompt, serve.

The CLI is a thin client of the library APIs; no logic lives here. Exit
codes: 0 success, 1 partial failure (listed on stderr), 2 fatal. Every
command accepts --json and emits stable, sorted-key JSON for snapshot
testing.
"""

from __future__ import annotations

import csv as csv_module
import json
import os
import sys
from pathlib import Path

import click

from . import pipelines, sparse
from . import query as dq
from .config import ConfigError, ServiceConfig, load_config
from .dual import DualStore, EmptyStoreError
from .ingest import ChunkingConfig, IngestError, load_directory
from .llm import BackendError, LlmClient, UnknownProviderError, with_backend
from .query import PureNegationError, QuerySyntaxError
from .structured import RecordSchema, SchemaError

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2


def _data_dir(override: str | None) -> Path:
    return Path(override or os.environ.get("DOCFOUNDRY_STORES_ROOT")
                or "docfoundry_data")


def _open_store(data_dir: Path) -> DualStore:
    if (data_dir / "manifest.json").exists():
        return DualStore.load(data_dir)
    return DualStore()


def _client(backend: str | None) -> LlmClient:
    name = backend or os.environ.get("DOCFOUNDRY_BACKEND") or "echo/echo"
    return LlmClient(with_backend(name))


def _emit(payload: dict, as_json: bool, text: str) -> None:
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True, indent=2))
    else:
        click.echo(text)


def _fatal(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_FATAL)


@click.group()
def main():
    """Offline-first document intelligence engine."""


@main.command()
@click.argument("directory", type=click.Path())
@click.option("--store", "store_kind", default="dual",
              type=click.Choice(["sparse", "dense", "dual"]))
@click.option("--chunk-size", default=300, show_default=True)
@click.option("--overlap", default=50, show_default=True)
@click.option("--glob", "globs", multiple=True,
              help="Include pattern; repeatable. Defaults to supported extensions.")
@click.option("--data-dir", default=None)
@click.option("--json", "as_json", is_flag=True)
def ingest(directory, store_kind, chunk_size, overlap, globs, data_dir, as_json):
    """Load DIRECTORY, chunk, and index into the store."""
    root = _data_dir(data_dir)
    try:
        cfg = ChunkingConfig(chunk_size_words=chunk_size, overlap_words=overlap)
    except ValueError as exc:
        _fatal(str(exc))
    try:
        records, failures = load_directory(directory, list(globs) or None)
    except IngestError as exc:
        _fatal(str(exc))
    store = _open_store(root)
    store.chunking = cfg
    duplicates = [r.source_path for r in records if r.doc_id in store.documents]
    fresh = [r for r in records if r.doc_id not in store.documents]
    chunks = store.add_documents(fresh)
    store.save(root)
    payload = {"documents": len(fresh), "chunks": len(chunks),
               "duplicates": duplicates, "failures": failures}
    _emit(payload, as_json, f"{len(fresh)} documents, {len(chunks)} chunks")
    for failure in failures:
        click.echo(f"warning: {failure}", err=True)
    for dup in duplicates:
        click.echo(f"warning: already ingested, skipped: {dup}", err=True)
    if failures or duplicates:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("query_text")
@click.option("-k", default=5, show_default=True)
@click.option("--page", default=0, show_default=True)
@click.option("--mode", default="hybrid",
              type=click.Choice(["sparse", "dense", "hybrid"]))
@click.option("--data-dir", default=None)
@click.option("--json", "as_json", is_flag=True)
def search(query_text, k, page, mode, data_dir, as_json):
    """Ranked search with highlighted snippets."""
    store = _open_store(_data_dir(data_dir))
    try:
        if mode == "sparse":
            ast = dq.parse_query(query_text)
            total, s_hits = sparse.search(store.sparse_index, ast, k=k,
                                          page=page,
                                          chunk_texts=store.chunk_texts())
            hits = [{"chunk_ref": h.chunk_ref, "score": h.score,
                     "highlights": [list(s) for s in h.highlights]}
                    for h in s_hits]
        else:
            fused = store.hybrid_search(query_text, k=(page + 1) * k, mode=mode)
            total = len(fused)
            hits = [{"chunk_ref": h.chunk_ref, "score": h.fused_score,
                     "highlights": [list(s) for s in h.highlights]}
                    for h in fused[page * k:(page + 1) * k]]
    except QuerySyntaxError as exc:
        click.echo(f"error: {exc}", err=True)
        click.echo(query_text, err=True)
        click.echo(" " * exc.position + "^", err=True)
        sys.exit(EXIT_FATAL)
    except (PureNegationError, EmptyStoreError, ValueError) as exc:
        _fatal(str(exc))
    texts = store.chunk_texts()
    for hit in hits:
        hit["snippet"] = texts.get(hit["chunk_ref"], "")
    if as_json:
        click.echo(json.dumps({"total": total, "hits": hits}, sort_keys=True,
                              indent=2))
        return
    click.echo(f"{total} matches")
    for i, hit in enumerate(hits, start=1 + page * k):
        click.echo(f"{i}. {hit['chunk_ref']}  score={hit['score']:.4f}")
        click.echo(f"   {_ansi_highlight(hit['snippet'], hit['highlights'])}")


def _ansi_highlight(text: str, spans: list[list[int]], width: int = 200) -> str:
    out = []
    cursor = 0
    for start, end in spans:
        out.append(text[cursor:start])
        out.append(f"\x1b[1;33m{text[start:end]}\x1b[0m")
        cursor = end
    out.append(text[cursor:])
    flat = "".join(out).replace("\n", " ")
    return flat[:width]


@main.command()
@click.argument("question")
@click.option("-k", default=4, show_default=True)
@click.option("--mode", default="hybrid",
              type=click.Choice(["sparse", "dense", "hybrid"]))
@click.option("--backend", default=None, help="provider/model")
@click.option("--data-dir", default=None)
@click.option("--json", "as_json", is_flag=True)
def ask(question, k, mode, backend, data_dir, as_json):
    """Cited question answering over the ingested corpus."""
    store = _open_store(_data_dir(data_dir))
    try:
        client = _client(backend)
        answer = pipelines.ask(client, store, question, k=k, mode=mode)
    except (EmptyStoreError, UnknownProviderError, BackendError,
            QuerySyntaxError, PureNegationError) as exc:
        _fatal(str(exc))
    grounding = pipelines.verify_grounding(answer, store)
    payload = {**answer.to_json(), "grounding": grounding.to_json()}
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True, indent=2))
        return
    click.echo(answer.answer)
    click.echo("\nSources:")
    for i, source in enumerate(answer.sources, start=1):
        click.echo(f"[{i}] {source.chunk_ref}  score={source.score:.4f}")
        click.echo(f"    {source.snippet[:160]}")
    click.echo("\nGrounding:")
    for verdict in grounding.sentences:
        mark = "supported" if verdict.supported else "UNSUPPORTED"
        click.echo(f"  [{mark}] {verdict.sentence[:120]}")


@main.command()
@click.argument("text")
@click.option("--backend", default=None, help="provider/model")
@click.option("--json", "as_json", is_flag=True)
def prompt(text, backend, as_json):
    """Send a single prompt to the backend."""
    try:
        result = _client(backend).complete(text)
    except (UnknownProviderError, BackendError) as exc:
        _fatal(str(exc))
    _emit({"text": result.text, "model": result.model,
           "backend_kind": result.backend_kind}, as_json, result.text)


@main.command()
@click.argument("doc_id")
@click.option("--concept", default=None)
@click.option("--budget", default=150, show_default=True)
@click.option("--min-similarity", default=0.3, show_default=True)
@click.option("--backend", default=None)
@click.option("--data-dir", default=None)
@click.option("--json", "as_json", is_flag=True)
def summarize(doc_id, concept, budget, min_similarity, backend, data_dir, as_json):
    """Summarize a document (optionally focused on a concept)."""
    store = _open_store(_data_dir(data_dir))
    record = store.documents.get(doc_id)
    if record is None:
        _fatal(f"no such document: {doc_id}")
    doc_chunks = sorted((c for c in store.chunks.values() if c.doc_id == doc_id),
                        key=lambda c: c.chunk_index)
    try:
        client = _client(backend)
        if concept:
            result = pipelines.summarize_concept(
                client, store.embedder, record, concept, cfg=store.chunking,
                min_similarity=min_similarity, word_budget=budget,
                chunks=doc_chunks)
        else:
            result = pipelines.summarize_map_reduce(
                client, record, cfg=store.chunking, word_budget=budget,
                chunks=doc_chunks)
    except (UnknownProviderError, BackendError) as exc:
        _fatal(str(exc))
    text = result.summary if not result.no_relevant_content else \
        "(no content relevant to the concept)"
    _emit(result.to_json(), as_json, text)


@main.command()
@click.argument("doc_id")
@click.option("--schema", "schema_path", required=True, type=click.Path())
@click.option("--template", "template_path", required=True, type=click.Path())
@click.option("--unit", default="sentence",
              type=click.Choice(["sentence", "paragraph", "passage"]))
@click.option("--csv", "csv_path", default=None, type=click.Path())
@click.option("--attempt-fix/--no-attempt-fix", default=True)
@click.option("--backend", default=None)
@click.option("--data-dir", default=None)
@click.option("--json", "as_json", is_flag=True)
def extract(doc_id, schema_path, template_path, unit, csv_path, attempt_fix,
            backend, data_dir, as_json):
    """Apply a structured-extraction prompt to every unit of a document."""
    store = _open_store(_data_dir(data_dir))
    record = store.documents.get(doc_id)
    if record is None:
        _fatal(f"no such document: {doc_id}")
    try:
        schema = RecordSchema.load(schema_path)
    except (SchemaError, OSError, json.JSONDecodeError) as exc:
        _fatal(f"cannot load schema: {exc}")
    try:
        template = Path(template_path).read_text(encoding="utf-8")
    except OSError as exc:
        _fatal(f"cannot load template: {exc}")
    try:
        client = _client(backend)
        rows = pipelines.extract_over_units(client, record, unit, template,
                                            schema, attempt_fix=attempt_fix)
    except (UnknownProviderError, BackendError, ValueError) as exc:
        _fatal(str(exc))
    if csv_path:
        Path(csv_path).write_bytes(pipelines.export_rows_csv(rows, schema))
    payload = {"rows": [r.to_json() for r in rows],
               "failed": sum(1 for r in rows if not r.ok)}
    _emit(payload, as_json,
          f"{len(rows)} units, {payload['failed']} failed"
          + (f", CSV written to {csv_path}" if csv_path else ""))
    if payload["failed"]:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--examples", "examples_path", required=True, type=click.Path(),
              help="CSV with header text,label")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def classify(examples_path, input_path, as_json):
    """Few-shot classification of a text file against labeled examples."""
    from .embeddings import HashedNgramEmbedder

    try:
        with open(examples_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv_module.DictReader(fh)
            examples = [(row["text"], row["label"]) for row in reader]
    except (OSError, KeyError) as exc:
        _fatal(f"cannot load examples: {exc}")
    try:
        text = Path(input_path).read_text(encoding="utf-8")
    except OSError as exc:
        _fatal(f"cannot read input: {exc}")
    embedder = HashedNgramEmbedder()
    try:
        model = pipelines.fewshot_train(embedder, examples)
    except ValueError as exc:
        _fatal(str(exc))
    label, score = pipelines.fewshot_predict(model, embedder, text)
    _emit({"label": label, "score": score}, as_json, f"{label}\t{score:.4f}")


@main.command()
@click.option("--port", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--ui-dir", default=None, type=click.Path(),
              help="Static web UI bundle; defaults to ./frontend/dist if present.")
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(port, config_path, ui_dir, host):
    """Start the HTTP service (and web UI when a bundle is available)."""
    from .service import run_server

    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as exc:
        _fatal(str(exc))
    except Exception as exc:  # malformed TOML
        _fatal(f"cannot parse config: {exc}")
    if port is not None:
        cfg = ServiceConfig(stores_root=cfg.stores_root, allowlist=cfg.allowlist,
                            backend=cfg.backend, port=port)
    static = ui_dir or os.environ.get("DOCFOUNDRY_UI_DIR")
    if static is None and Path("frontend/dist").is_dir():
        static = "frontend/dist"
    try:
        run_server(cfg, static_dir=static, host=host)
    except OSError as exc:  # port in use and friends
        _fatal(str(exc))


if __name__ == "__main__":
    main()
