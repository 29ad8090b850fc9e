/**
 * Pure HTML renderers for every screen.
 *
 * All visible text is API-provided: snippets are sliced only at the
 * API's own highlight offsets, verdict badges come from the grounding
 * report, and error boxes show the server's code and message verbatim.
 * Keeping these pure (payload in, HTML out) is what the DOM-vs-API
 * equivalence tests exercise.
 */

import type {
  ApiErrorBody,
  AskResponse,
  ChatMessage,
  DocumentInfo,
  ExtractionRow,
  HealthResponse,
  SearchResponse,
  SummarizeResponse,
} from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function docIdOf(chunkRef: string): string {
  const cut = chunkRef.lastIndexOf(":");
  return cut === -1 ? chunkRef : chunkRef.slice(0, cut);
}

/** Wrap the API's highlight spans in <mark>, slicing at its offsets only. */
export function renderHighlightedSnippet(
  snippet: string,
  highlights: [number, number][],
): string {
  let cursor = 0;
  const parts: string[] = [];
  for (const [start, end] of highlights) {
    parts.push(escapeHtml(snippet.slice(cursor, start)));
    parts.push(`<mark>${escapeHtml(snippet.slice(start, end))}</mark>`);
    cursor = end;
  }
  parts.push(escapeHtml(snippet.slice(cursor)));
  return parts.join("");
}

// --- prompts (chat) ----------------------------------------------------------

export function renderChatHistory(messages: ChatMessage[]): string {
  if (!messages.length) {
    return `<p class="empty">No messages yet.</p>`;
  }
  return messages
    .map(
      (m) =>
        `<div class="bubble ${m.role}" data-role="${m.role}">` +
        `${escapeHtml(m.content)}</div>`,
    )
    .join("");
}

// --- document QA ----------------------------------------------------------------

export function renderAnswer(
  response: AskResponse,
  docPaths: Record<string, string>,
): string {
  const sentences = response.grounding.sentences
    .map((v) => {
      const cls = v.supported ? "supported" : "unverified";
      const badge = v.supported ? "supported" : "unverified";
      return (
        `<span class="sentence ${cls}">${escapeHtml(v.sentence)}` +
        ` <span class="badge ${cls}">${badge}</span></span>`
      );
    })
    .join(" ");
  const cards = response.sources
    .map((source, i) => {
      const docPath = docPaths[docIdOf(source.chunk_ref)] ?? "";
      return (
        `<div class="source-card" data-chunk-ref="${escapeHtml(source.chunk_ref)}">` +
        `<div class="source-head">[${i + 1}] ` +
        `<span class="doc-path">${escapeHtml(docPath)}</span> ` +
        `<span class="score">score=${String(source.score)}</span></div>` +
        `<blockquote class="snippet">${escapeHtml(source.snippet)}</blockquote>` +
        `</div>`
      );
    })
    .join("");
  return (
    `<div class="answer" data-mode="${escapeHtml(response.retrieval_mode)}">${sentences}</div>` +
    `<div class="sources">${cards}</div>`
  );
}

// --- search -------------------------------------------------------------------------

export function renderSearchResults(
  response: SearchResponse,
  page: number,
  k: number,
): string {
  const items = response.hits
    .map(
      (hit, i) =>
        `<li class="hit" data-chunk-ref="${escapeHtml(hit.chunk_ref)}">` +
        `<div class="hit-head">${page * k + i + 1}. ` +
        `<span class="doc-path">${escapeHtml(hit.doc_path ?? "")}</span> ` +
        `<span class="score">score=${String(hit.score)}</span></div>` +
        `<div class="snippet">` +
        renderHighlightedSnippet(hit.snippet, hit.highlights) +
        `</div></li>`,
    )
    .join("");
  return (
    `<p class="total">${response.total} matches</p>` +
    `<ol class="hits" start="${page * k + 1}">${items}</ol>`
  );
}

export function renderPager(total: number, page: number, k: number): string {
  const pages = Math.max(1, Math.ceil(total / k));
  const prev = page > 0 ? "" : "disabled";
  const next = page + 1 < pages ? "" : "disabled";
  return (
    `<button id="prev-page" ${prev}>previous</button>` +
    `<span class="page-info">page ${page + 1} of ${pages}</span>` +
    `<button id="next-page" ${next}>next</button>`
  );
}

// --- analysis --------------------------------------------------------------------------

export function renderAnalysisRows(
  rows: ExtractionRow[],
  fieldNames: string[],
): string {
  const headers = ["unit", "text", ...fieldNames, "attempts", "error"]
    .map((h) => `<th>${escapeHtml(h)}</th>`)
    .join("");
  const body = rows
    .map((row) => {
      const record = row.record ?? {};
      const fields = fieldNames
        .map((name) => {
          const value = record[name];
          const text =
            value === undefined || value === null
              ? ""
              : Array.isArray(value)
                ? value.join("; ")
                : String(value);
          return `<td>${escapeHtml(text)}</td>`;
        })
        .join("");
      const error = row.error
        ? row.error.errors.map((e) => `${e.path}: ${e.message}`).join("; ")
        : "";
      const cls = row.record ? "ok" : "failed";
      return (
        `<tr class="row ${cls}" data-unit-index="${row.unit_index}">` +
        `<td>${row.unit_index}</td>` +
        `<td>${escapeHtml(row.unit_text)}</td>` +
        fields +
        `<td>${row.attempts_used}</td>` +
        `<td class="error-cell">${escapeHtml(error)}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="rows"><thead><tr>${headers}</tr></thead>` +
    `<tbody>${body}</tbody></table>`
  );
}

export function renderSummary(result: SummarizeResponse): string {
  if (result.no_relevant_content) {
    return `<p class="empty">No content relevant to the concept.</p>`;
  }
  return (
    `<blockquote class="summary">${escapeHtml(result.summary)}</blockquote>` +
    `<p class="audit">calls: ${result.llm_call_count} ` +
    `(map ${result.map_call_count}, reduce ${result.reduce_call_count})</p>`
  );
}

// --- manage -----------------------------------------------------------------------------

export function renderDocumentsTable(documents: DocumentInfo[]): string {
  if (!documents.length) {
    return `<p class="empty">No documents ingested.</p>`;
  }
  const rows = documents
    .map(
      (doc) =>
        `<tr data-doc-id="${escapeHtml(doc.doc_id)}">` +
        `<td class="doc-path">${escapeHtml(doc.source_path)}</td>` +
        `<td>${doc.chunks}</td>` +
        `<td><button class="delete-doc" data-doc-id="${escapeHtml(doc.doc_id)}">` +
        `delete</button></td></tr>`,
    )
    .join("");
  return (
    `<table class="documents"><thead>` +
    `<tr><th>path</th><th>chunks</th><th></th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

export function renderHealthBadge(health: HealthResponse): string {
  const cls = health.backend.reachable ? "up" : "down";
  const text = health.backend.reachable ? "reachable" : "unreachable";
  return (
    `<span class="health-badge ${cls}" data-reachable="${health.backend.reachable}">` +
    `${escapeHtml(health.backend.kind)}/${escapeHtml(health.backend.model)}: ${text}` +
    `</span> <span class="stats">${health.store.documents} docs, ` +
    `${health.store.chunks} chunks, v${escapeHtml(health.version)}</span>`
  );
}

// --- errors ------------------------------------------------------------------------------

/** Error box showing the server's code and message verbatim; for query
 * syntax errors with a position, a caret line pinpoints the offset. */
export function renderApiError(error: ApiErrorBody, queryText?: string): string {
  let caret = "";
  const detail = error.detail as { position?: number } | null;
  if (
    queryText !== undefined &&
    detail &&
    typeof detail.position === "number"
  ) {
    caret =
      `<pre class="caret">${escapeHtml(queryText)}\n` +
      `${" ".repeat(detail.position)}^</pre>`;
  }
  return (
    `<div class="error" data-code="${escapeHtml(error.code)}">` +
    `<strong>${escapeHtml(error.code)}</strong>: ${escapeHtml(error.message)}` +
    `${caret}</div>`
  );
}
