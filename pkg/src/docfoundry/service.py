"""HTTP service over the engine.

Every non-2xx response body has exactly the ApiError shape
{status, code, message, detail}. Responses are pure functions of
(persisted state, request) under a scripted backend; chat sessions are
persisted as JSON-lines event logs before the response is sent, so a
crash between persist and respond never loses an accepted turn.
"""

from __future__ import annotations

import json
import os
import re
import threading
from pathlib import Path

import httpx
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__, pipelines, sparse
from . import query as dq
from .config import ServiceConfig
from .dual import DualStore, EmptyStoreError
from .ingest import load_directory
from .llm import (BackendError, BackendUnreachableError, ChatMessage, LlmClient,
                  ScriptExhaustedError)
from .pipelines import ChatSession
from .query import PureNegationError, QuerySyntaxError
from .structured import RecordSchema, SchemaError


class ApiError(Exception):
    """Service-level error carried to the wire as the canonical body."""

    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def body(self) -> dict:
        return {"status": self.status, "code": self.code,
                "message": self.message, "detail": self.detail}


class IngestBody(BaseModel):
    path: str
    globs: list[str] | None = None
    store: str = "dual"


class AskBody(BaseModel):
    question: str
    k: int = 4
    mode: str = "hybrid"


class ChatBody(BaseModel):
    session_id: str | None = None
    message: str


class ExtractBody(BaseModel):
    doc_id: str
    unit: str = "sentence"
    schema_: dict = Field(default_factory=dict, alias="schema")
    template: str = "{unit_text}"
    attempt_fix: bool = True


class SummarizeBody(BaseModel):
    doc_id: str
    concept: str | None = None
    budget: int = 150
    min_similarity: float = 0.3


class AppState:
    """Mutable server state: the dual store, backend client, and the
    sequential id counters that make replays deterministic."""

    def __init__(self, config: ServiceConfig, client: LlmClient | None = None,
                 store: DualStore | None = None):
        self.config = config
        self.config.stores_root.mkdir(parents=True, exist_ok=True)
        self.config.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.config.jobs_dir.mkdir(parents=True, exist_ok=True)
        if store is not None:
            self.store = store
        elif (self.config.stores_root / "manifest.json").exists():
            self.store = DualStore.load(self.config.stores_root)
        else:
            self.store = DualStore()
        self.client = client or LlmClient(config.backend)
        self._store_lock = threading.Lock()
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self.crash_after_persist = False  # fault-injection hook for tests

    # --- deterministic sequential ids ---------------------------------------

    def next_session_id(self) -> str:
        return f"s{self._next_counter(self.config.sessions_dir, 's'):06d}"

    def next_job_id(self) -> str:
        return f"j{self._next_counter(self.config.jobs_dir, 'j'):06d}"

    @staticmethod
    def _next_counter(directory: Path, prefix: str) -> int:
        highest = 0
        for p in directory.iterdir():
            m = re.fullmatch(rf"{prefix}(\d+)", p.stem)
            if m:
                highest = max(highest, int(m.group(1)))
        return highest + 1

    def session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    # --- session persistence (JSON-lines event log) ---------------------------

    def session_path(self, session_id: str) -> Path:
        return self.config.sessions_dir / f"{session_id}.jsonl"

    def load_session(self, session_id: str) -> ChatSession:
        path = self.session_path(session_id)
        if not path.exists():
            raise ApiError(404, "unknown_session",
                           f"no such session: {session_id}")
        history: list[ChatMessage] = []
        created_at = ""
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                if event.get("event") == "created":
                    created_at = event.get("created_at", "")
                else:
                    history.append(ChatMessage(role=event["role"],
                                               content=event["content"]))
        return ChatSession(session_id=session_id, history=tuple(history),
                           created_at=created_at)

    def create_session(self, session_id: str) -> ChatSession:
        path = self.session_path(session_id)
        from datetime import datetime, timezone

        created_at = datetime.now(timezone.utc).isoformat()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": "created", "session_id": session_id,
                                 "created_at": created_at}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return ChatSession(session_id=session_id, created_at=created_at)

    def persist_turn(self, session_id: str, user: ChatMessage,
                     assistant: ChatMessage) -> None:
        """Append the full turn and fsync before the response is sent."""
        with open(self.session_path(session_id), "a", encoding="utf-8") as fh:
            for message in (user, assistant):
                fh.write(json.dumps({"role": message.role,
                                     "content": message.content}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def persist_store(self) -> None:
        self.store.save(self.config.stores_root)

    # --- job persistence -----------------------------------------------------

    def save_job(self, job_id: str, schema: RecordSchema,
                 rows: list[pipelines.ExtractionRow]) -> None:
        payload = {"job_id": job_id, "schema": schema.to_json(),
                   "rows": [r.to_json() for r in rows]}
        with open(self.config.jobs_dir / f"{job_id}.json", "w",
                  encoding="utf-8") as fh:
            json.dump(payload, fh)

    def load_job(self, job_id: str) -> dict:
        path = self.config.jobs_dir / f"{job_id}.json"
        if not path.exists():
            raise ApiError(404, "unknown_job", f"no such job: {job_id}")
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)


def _require_token(request: Request) -> None:
    token = os.environ.get("DOCFOUNDRY_TOKEN")
    if not token:
        return  # open local mode
    header = request.headers.get("authorization", "")
    if header != f"Bearer {token}":
        raise ApiError(401, "unauthorized", "missing or invalid bearer token")


def _path_allowed(path: Path, allowlist: list[Path]) -> bool:
    resolved = path.resolve()
    for allowed in allowlist:
        try:
            resolved.relative_to(allowed)
            return True
        except ValueError:
            continue
    return False


def create_app(config: ServiceConfig, client: LlmClient | None = None,
               store: DualStore | None = None,
               static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="docfoundry", version=__version__)
    state = AppState(config, client=client, store=store)
    app.state.engine = state

    # --- error mapping --------------------------------------------------------

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(StarletteHTTPException)
    async def handle_http_error(request: Request, exc: StarletteHTTPException):
        err = ApiError(exc.status_code, "http_error", str(exc.detail))
        return JSONResponse(status_code=exc.status_code, content=err.body())

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request,
                                      exc: RequestValidationError):
        err = ApiError(400, "bad_request", "invalid request body",
                       detail=json.loads(json.dumps(exc.errors(), default=str)))
        return JSONResponse(status_code=400, content=err.body())

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc: Exception):
        err = ApiError(500, "internal", f"{type(exc).__name__}: {exc}")
        return JSONResponse(status_code=500, content=err.body())

    def translate(exc: Exception) -> ApiError:
        if isinstance(exc, QuerySyntaxError):
            return ApiError(400, "query_syntax", str(exc),
                            detail={"position": exc.position})
        if isinstance(exc, PureNegationError):
            return ApiError(400, "query_syntax", str(exc))
        if isinstance(exc, EmptyStoreError):
            return ApiError(409, "empty_store", str(exc))
        if isinstance(exc, sparse.DuplicateChunkError):
            return ApiError(409, "duplicate_ingest", str(exc))
        if isinstance(exc, sparse.UnknownDocumentError):
            return ApiError(404, "unknown_document", str(exc))
        if isinstance(exc, BackendUnreachableError):
            return ApiError(502, "backend_unreachable", str(exc))
        if isinstance(exc, (BackendError, ScriptExhaustedError)):
            return ApiError(502, "backend_error", str(exc))
        if isinstance(exc, SchemaError):
            return ApiError(400, "invalid_schema", str(exc),
                            detail={"schema_error": str(exc)})
        raise exc

    # --- endpoints ---------------------------------------------------------------

    @app.post("/api/ingest")
    def api_ingest(body: IngestBody, request: Request):
        _require_token(request)
        if body.store not in ("sparse", "dense", "dual"):
            raise ApiError(400, "bad_request", f"unknown store {body.store!r}")
        source = Path(body.path)
        if not _path_allowed(source, config.allowlist):
            raise ApiError(400, "path_not_allowed",
                           f"path {body.path} is outside the configured allow-list")
        if not source.is_dir():
            raise ApiError(400, "bad_request", f"not a directory: {body.path}")
        with state._store_lock:
            records, failures = load_directory(source, body.globs)
            try:
                chunks = state.store.add_documents(records)
            except sparse.DuplicateChunkError as exc:
                raise translate(exc)
            state.persist_store()
        return {"documents": len(records), "chunks": len(chunks),
                "failures": failures}

    @app.get("/api/search")
    def api_search(q: str, request: Request, k: int = 10, page: int = 0,
                   mode: str = "hybrid"):
        _require_token(request)
        if not q.strip():
            raise ApiError(400, "query_syntax", "empty query",
                           detail={"position": 0})
        if k <= 0 or page < 0:
            raise ApiError(400, "bad_request", "k must be > 0 and page >= 0")
        if mode not in ("sparse", "dense", "hybrid"):
            raise ApiError(400, "bad_request", f"unknown mode {mode!r}")
        try:
            if mode == "sparse":
                ast = dq.parse_query(q)
                total, s_hits = sparse.search(
                    state.store.sparse_index, ast, k=k, page=page,
                    chunk_texts=state.store.chunk_texts())
                hits = [{"chunk_ref": h.chunk_ref, "score": h.score,
                         "highlights": [list(s) for s in h.highlights]}
                        for h in s_hits]
            else:
                fused = state.store.hybrid_search(q, k=(page + 1) * k, mode=mode)
                total = len(fused) if mode == "hybrid" else len(state.store.chunks)
                hits = [{"chunk_ref": h.chunk_ref, "score": h.fused_score,
                         "highlights": [list(s) for s in h.highlights]}
                        for h in fused[page * k:(page + 1) * k]]
        except (QuerySyntaxError, PureNegationError, EmptyStoreError) as exc:
            raise translate(exc)
        texts = state.store.chunk_texts()
        for hit in hits:
            ref = hit["chunk_ref"]
            hit["snippet"] = texts.get(ref, "")
            doc_id = ref.rsplit(":", 1)[0]
            record = state.store.documents.get(doc_id)
            hit["doc_path"] = record.source_path if record else None
        return {"total": total, "hits": hits}

    @app.post("/api/ask")
    def api_ask(body: AskBody, request: Request):
        _require_token(request)
        try:
            answer = pipelines.ask(state.client, state.store, body.question,
                                   k=body.k, mode=body.mode)
        except (EmptyStoreError, QuerySyntaxError, PureNegationError,
                BackendError) as exc:
            raise translate(exc)
        grounding = pipelines.verify_grounding(answer, state.store)
        return {**answer.to_json(), "grounding": grounding.to_json()}

    @app.post("/api/chat")
    def api_chat(body: ChatBody, request: Request):
        _require_token(request)
        if not body.message.strip():
            raise ApiError(400, "bad_request", "message must be non-empty")
        if body.session_id is None:
            session = state.create_session(state.next_session_id())
        else:
            session = state.load_session(body.session_id)
        lock = state.session_lock(session.session_id)
        if not lock.acquire(blocking=False):
            raise ApiError(429, "session_busy",
                           f"a turn is already in flight for {session.session_id}")
        try:
            try:
                reply, updated = pipelines.chat_turn(state.client, session,
                                                     body.message)
            except BackendError as exc:
                raise translate(exc)
            user, assistant = updated.history[-2], updated.history[-1]
            state.persist_turn(session.session_id, user, assistant)
            if state.crash_after_persist:
                raise RuntimeError("injected crash between persist and respond")
        finally:
            lock.release()
        return {"session_id": session.session_id, "reply": reply}

    @app.get("/api/sessions/{session_id}")
    def api_session(session_id: str, request: Request):
        _require_token(request)
        session = state.load_session(session_id)
        return {"session_id": session.session_id,
                "history": [{"role": m.role, "content": m.content}
                            for m in session.history]}

    @app.post("/api/extract")
    def api_extract(body: ExtractBody, request: Request):
        _require_token(request)
        record = state.store.documents.get(body.doc_id)
        if record is None:
            raise ApiError(404, "unknown_document",
                           f"no such document: {body.doc_id}")
        if body.unit not in ("sentence", "paragraph", "passage"):
            raise ApiError(400, "bad_request", f"unknown unit {body.unit!r}")
        try:
            schema = RecordSchema.from_json(body.schema_ or {})
        except SchemaError as exc:
            raise translate(exc)
        if "{unit_text}" not in body.template:
            raise ApiError(400, "bad_request",
                           "template must contain {unit_text}")
        try:
            rows = pipelines.extract_over_units(
                state.client, record, body.unit, body.template, schema,
                attempt_fix=body.attempt_fix)
        except (BackendError, ScriptExhaustedError) as exc:
            raise translate(exc)
        job_id = state.next_job_id()
        state.save_job(job_id, schema, rows)
        return {"job_id": job_id, "rows": [r.to_json() for r in rows]}

    @app.get("/api/extract/{job_id}/csv")
    def api_extract_csv(job_id: str, request: Request):
        _require_token(request)
        job = state.load_job(job_id)
        schema = RecordSchema.from_json(job["schema"])
        rows = [_row_from_json(r) for r in job["rows"]]
        csv_bytes = pipelines.export_rows_csv(rows, schema)
        return Response(content=csv_bytes, media_type="text/csv; charset=utf-8")

    @app.post("/api/summarize")
    def api_summarize(body: SummarizeBody, request: Request):
        _require_token(request)
        record = state.store.documents.get(body.doc_id)
        if record is None:
            raise ApiError(404, "unknown_document",
                           f"no such document: {body.doc_id}")
        doc_chunks = [c for c in state.store.chunks.values()
                      if c.doc_id == body.doc_id]
        doc_chunks.sort(key=lambda c: c.chunk_index)
        try:
            if body.concept:
                result = pipelines.summarize_concept(
                    state.client, state.store.embedder, record, body.concept,
                    cfg=state.store.chunking, min_similarity=body.min_similarity,
                    word_budget=body.budget, chunks=doc_chunks)
            else:
                result = pipelines.summarize_map_reduce(
                    state.client, record, cfg=state.store.chunking,
                    word_budget=body.budget, chunks=doc_chunks)
        except BackendError as exc:
            raise translate(exc)
        return result.to_json()

    @app.get("/api/documents")
    def api_documents(request: Request):
        _require_token(request)
        docs = []
        for doc_id in sorted(state.store.documents,
                             key=lambda d: state.store.documents[d].source_path):
            record = state.store.documents[doc_id]
            n_chunks = sum(1 for c in state.store.chunks.values()
                           if c.doc_id == doc_id)
            docs.append({"doc_id": doc_id, "source_path": record.source_path,
                         "chunks": n_chunks})
        return {"documents": docs}

    @app.delete("/api/documents/{doc_id}")
    def api_delete_document(doc_id: str, request: Request):
        _require_token(request)
        with state._store_lock:
            try:
                state.store.delete_document(doc_id)
            except sparse.UnknownDocumentError as exc:
                raise translate(exc)
            state.persist_store()
        return {"deleted": doc_id}

    @app.get("/api/health")
    def api_health(request: Request):
        _require_token(request)
        return {
            "version": __version__,
            "store": {
                "documents": len(state.store.documents),
                "chunks": len(state.store.chunks),
                "sparse_terms": len(state.store.sparse_index.postings),
                "dense_vectors": len(state.store.dense_store.index),
            },
            "backend": {
                "kind": config.backend.kind,
                "model": config.backend.model,
                "reachable": _backend_reachable(config, state.client),
            },
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="webui")

    return app


def _backend_reachable(config: ServiceConfig, client: LlmClient) -> bool:
    if config.backend.kind in ("echo", "scripted"):
        return True
    try:
        httpx.get(config.backend.base_url, timeout=2.0)
        return True
    except httpx.HTTPError:
        return False


def _row_from_json(obj: dict) -> pipelines.ExtractionRow:
    from .structured import ValidationReport

    error = None
    if obj.get("error"):
        error = ValidationReport(
            ok=obj["error"]["ok"],
            errors=tuple((e["path"], e["message"])
                         for e in obj["error"]["errors"]),
            warnings=tuple((w["path"], w["message"])
                           for w in obj["error"].get("warnings", [])))
    return pipelines.ExtractionRow(
        doc_id=obj["doc_id"], unit_index=obj["unit_index"],
        unit_text=obj["unit_text"], record=obj["record"],
        attempts_used=obj["attempts_used"], error=error)


def run_server(config: ServiceConfig, static_dir: str | Path | None = None,
               host: str = "127.0.0.1") -> None:
    import socket

    import uvicorn

    # probe the port up front: uvicorn swallows bind errors into its own
    # exit code, we want a plain OSError for the CLI's exit-2 contract
    probe = socket.socket()
    try:
        probe.bind((host, config.port))
    finally:
        probe.close()
    app = create_app(config, static_dir=static_dir)
    uvicorn.run(app, host=host, port=config.port, log_level="warning")
