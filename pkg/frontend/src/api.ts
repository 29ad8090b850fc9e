/**
 * Typed client for the docfoundry HTTP API.
 *
 * Every non-2xx response body has the shape {status, code, message, detail};
 * it is surfaced verbatim as an ApiRequestError so screens can show the
 * server's own code and message.
 */

export interface ApiErrorBody {
  status: number;
  code: string;
  message: string;
  detail: unknown;
}

export class ApiRequestError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: unknown;

  constructor(body: ApiErrorBody) {
    super(body.message);
    this.status = body.status;
    this.code = body.code;
    this.detail = body.detail;
  }
}

export interface SearchHit {
  chunk_ref: string;
  score: number;
  snippet: string;
  highlights: [number, number][];
  doc_path: string | null;
}

export interface SearchResponse {
  total: number;
  hits: SearchHit[];
}

export interface SourceCitation {
  chunk_ref: string;
  score: number;
  snippet: string;
}

export interface SentenceVerdict {
  sentence: string;
  supported: boolean;
  overlap: number;
}

export interface GroundingReport {
  snippets_verbatim: boolean;
  sentences: SentenceVerdict[];
  unsupported: string[];
  ok: boolean;
}

export interface AskResponse {
  answer: string;
  sources: SourceCitation[];
  retrieval_mode: string;
  grounding: GroundingReport;
}

export interface ChatResponse {
  session_id: string;
  reply: string;
}

export interface ChatMessage {
  role: "system" | "user" | "assistant";
  content: string;
}

export interface SessionHistory {
  session_id: string;
  history: ChatMessage[];
}

export interface ValidationIssue {
  path: string;
  message: string;
}

export interface RowError {
  ok: boolean;
  errors: ValidationIssue[];
  warnings: ValidationIssue[];
}

export interface ExtractionRow {
  doc_id: string;
  unit_index: number;
  unit_text: string;
  record: Record<string, unknown> | null;
  attempts_used: number;
  error: RowError | null;
}

export interface ExtractResponse {
  job_id: string;
  rows: ExtractionRow[];
}

export interface DocumentInfo {
  doc_id: string;
  source_path: string;
  chunks: number;
}

export interface HealthResponse {
  version: string;
  store: {
    documents: number;
    chunks: number;
    sparse_terms: number;
    dense_vectors: number;
  };
  backend: { kind: string; model: string; reachable: boolean };
}

export interface IngestResponse {
  documents: number;
  chunks: number;
  failures: string[];
}

export interface SummarizeResponse {
  summary: string;
  map_call_count: number;
  reduce_call_count: number;
  llm_call_count: number;
  chunk_refs: string[];
  skipped_chunk_refs: string[];
  no_relevant_content: boolean;
}

export type SearchMode = "sparse" | "dense" | "hybrid";

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let body: ApiErrorBody;
    try {
      body = (await response.json()) as ApiErrorBody;
    } catch {
      body = {
        status: response.status,
        code: "http_error",
        message: response.statusText,
        detail: null,
      };
    }
    throw new ApiRequestError(body);
  }
  return (await response.json()) as T;
}

function post<T>(url: string, body: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}

export class Api {
  constructor(readonly base: string = "") {}

  search(q: string, opts: { k?: number; page?: number; mode?: SearchMode } = {}): Promise<SearchResponse> {
    const params = new URLSearchParams({ q });
    params.set("k", String(opts.k ?? 10));
    params.set("page", String(opts.page ?? 0));
    params.set("mode", opts.mode ?? "hybrid");
    return request<SearchResponse>(`${this.base}/api/search?${params}`);
  }

  ask(question: string, k = 4, mode: SearchMode = "hybrid"): Promise<AskResponse> {
    return post<AskResponse>(`${this.base}/api/ask`, { question, k, mode });
  }

  chat(message: string, sessionId?: string): Promise<ChatResponse> {
    const body: Record<string, string> = { message };
    if (sessionId) body.session_id = sessionId;
    return post<ChatResponse>(`${this.base}/api/chat`, body);
  }

  session(sessionId: string): Promise<SessionHistory> {
    return request<SessionHistory>(`${this.base}/api/sessions/${sessionId}`);
  }

  extract(body: {
    doc_id: string;
    unit: string;
    schema: unknown;
    template: string;
    attempt_fix?: boolean;
  }): Promise<ExtractResponse> {
    return post<ExtractResponse>(`${this.base}/api/extract`, body);
  }

  extractCsvUrl(jobId: string): string {
    return `${this.base}/api/extract/${jobId}/csv`;
  }

  summarize(docId: string, concept?: string): Promise<SummarizeResponse> {
    const body: Record<string, string> = { doc_id: docId };
    if (concept) body.concept = concept;
    return post<SummarizeResponse>(`${this.base}/api/summarize`, body);
  }

  documents(): Promise<{ documents: DocumentInfo[] }> {
    return request<{ documents: DocumentInfo[] }>(`${this.base}/api/documents`);
  }

  deleteDocument(docId: string): Promise<{ deleted: string }> {
    return request<{ deleted: string }>(`${this.base}/api/documents/${docId}`, {
      method: "DELETE",
    });
  }

  ingest(path: string, globs?: string[]): Promise<IngestResponse> {
    const body: Record<string, unknown> = { path };
    if (globs && globs.length) body.globs = globs;
    return post<IngestResponse>(`${this.base}/api/ingest`, body);
  }

  health(): Promise<HealthResponse> {
    return request<HealthResponse>(`${this.base}/api/health`);
  }
}
