/**
 * App shell: hash router plus event wiring for the five screens. The
 * server is the source of truth; the URL holds the only client state
 * (active screen, session id, query, page).
 */

import { Api, ApiRequestError } from "./api.js";
import type { DocumentInfo, SearchMode } from "./api.js";
import {
  renderAnalysisRows,
  renderAnswer,
  renderApiError,
  renderChatHistory,
  renderDocumentsTable,
  renderHealthBadge,
  renderPager,
  renderSearchResults,
  renderSummary,
} from "./render.js";
import {
  encodeViewState,
  parseViewState,
  validIngestPath,
  type ViewState,
} from "./state.js";

const api = new Api("");

const DEFAULT_SCHEMA = JSON.stringify(
  {
    name: "Finding",
    fields: [
      { name: "finding", type: "string", description: "the key finding" },
    ],
  },
  null,
  2,
);

function app(): HTMLElement {
  return document.getElementById("app") as HTMLElement;
}

function setState(state: ViewState, push = false): void {
  const hash = encodeViewState(state);
  if (push) {
    history.pushState(null, "", hash);
  } else {
    history.replaceState(null, "", hash);
  }
}

function errorBox(target: HTMLElement, error: unknown, query?: string): void {
  if (error instanceof ApiRequestError) {
    target.innerHTML = renderApiError(
      {
        status: error.status,
        code: error.code,
        message: error.message,
        detail: error.detail,
      },
      query,
    );
  } else {
    target.innerHTML = renderApiError({
      status: 0,
      code: "network_error",
      message: String(error),
      detail: null,
    });
  }
}

/** Run one action with its button disabled; re-enable when settled. */
async function withPending(
  button: HTMLButtonElement,
  action: () => Promise<void>,
): Promise<void> {
  if (button.disabled) return;
  button.disabled = true;
  try {
    await action();
  } finally {
    button.disabled = false;
  }
}

async function docPathsById(): Promise<Record<string, string>> {
  const listing = await api.documents();
  const map: Record<string, string> = {};
  for (const doc of listing.documents) {
    map[doc.doc_id] = doc.source_path;
  }
  return map;
}

// --- prompts ------------------------------------------------------------------

async function showPrompts(state: ViewState): Promise<void> {
  app().innerHTML = `
    <section class="screen" id="prompts">
      <div id="chat-log" class="chat-log" aria-live="polite"></div>
      <div id="chat-error"></div>
      <form id="chat-form">
        <input id="chat-input" placeholder="Send a message" autocomplete="off">
        <button id="chat-send" type="submit">send</button>
      </form>
    </section>`;
  const log = document.getElementById("chat-log") as HTMLElement;
  const errorSlot = document.getElementById("chat-error") as HTMLElement;
  const input = document.getElementById("chat-input") as HTMLInputElement;
  const send = document.getElementById("chat-send") as HTMLButtonElement;

  async function refresh(): Promise<void> {
    if (!state.sessionId) {
      log.innerHTML = renderChatHistory([]);
      return;
    }
    const session = await api.session(state.sessionId);
    log.innerHTML = renderChatHistory(session.history);
    log.scrollTop = log.scrollHeight;
  }

  try {
    await refresh();
  } catch (error) {
    errorBox(errorSlot, error);
  }

  (document.getElementById("chat-form") as HTMLFormElement).onsubmit = (e) => {
    e.preventDefault();
    const message = input.value.trim();
    if (!message) return;
    void withPending(send, async () => {
      log.insertAdjacentHTML(
        "beforeend",
        `<div class="bubble user pending">${message.replace(/</g, "&lt;")}</div>`,
      );
      try {
        const reply = await api.chat(message, state.sessionId);
        state.sessionId = reply.session_id;
        setState(state);
        input.value = "";
        errorSlot.innerHTML = "";
        await refresh();
      } catch (error) {
        // input preserved; 429 invites a retry
        if (error instanceof ApiRequestError && error.status === 429) {
          errorSlot.innerHTML = renderApiError({
            status: error.status,
            code: error.code,
            message: `${error.message} — wait for the active turn, then retry`,
            detail: error.detail,
          });
        } else {
          errorBox(errorSlot, error);
        }
        await refresh().catch(() => undefined);
      }
    });
  };
}

// --- document QA -----------------------------------------------------------------

async function showQa(state: ViewState): Promise<void> {
  app().innerHTML = `
    <section class="screen" id="qa">
      <form id="qa-form">
        <input id="qa-question" placeholder="Ask the corpus a question"
               value="${state.query ? state.query.replace(/"/g, "&quot;") : ""}">
        <select id="qa-mode">
          <option value="hybrid">hybrid</option>
          <option value="sparse">keyword</option>
          <option value="dense">semantic</option>
        </select>
        <button id="qa-send" type="submit">ask</button>
      </form>
      <div id="qa-result"></div>
      <div id="qa-chunk" class="chunk-view"></div>
    </section>`;
  const result = document.getElementById("qa-result") as HTMLElement;
  const chunkView = document.getElementById("qa-chunk") as HTMLElement;
  const question = document.getElementById("qa-question") as HTMLInputElement;
  const mode = document.getElementById("qa-mode") as HTMLSelectElement;
  if (state.mode) mode.value = state.mode;
  const send = document.getElementById("qa-send") as HTMLButtonElement;

  (document.getElementById("qa-form") as HTMLFormElement).onsubmit = (e) => {
    e.preventDefault();
    const text = question.value.trim();
    if (!text) return;
    void withPending(send, async () => {
      state.query = text;
      state.mode = mode.value as SearchMode;
      setState(state);
      try {
        const [answer, paths] = await Promise.all([
          api.ask(text, 4, mode.value as SearchMode),
          docPathsById(),
        ]);
        result.innerHTML = renderAnswer(answer, paths);
        for (const card of result.querySelectorAll<HTMLElement>(".source-card")) {
          card.onclick = () => {
            const snippet = card.querySelector(".snippet") as HTMLElement;
            chunkView.innerHTML =
              `<h3>${card.dataset.chunkRef ?? ""}</h3>` +
              `<blockquote>${snippet.innerHTML}</blockquote>`;
          };
        }
      } catch (error) {
        errorBox(result, error, text);
      }
    });
  };
}

// --- search -----------------------------------------------------------------------

const SEARCH_K = 10;

async function showSearch(state: ViewState): Promise<void> {
  app().innerHTML = `
    <section class="screen" id="search">
      <form id="search-form">
        <input id="search-query" placeholder='e.g. "fiscal year" AND budget NOT draft'
               value="${state.query ? state.query.replace(/"/g, "&quot;") : ""}">
        <select id="search-mode">
          <option value="hybrid">hybrid</option>
          <option value="sparse">keyword</option>
          <option value="dense">semantic</option>
        </select>
        <button id="search-send" type="submit">search</button>
      </form>
      <div id="search-results"></div>
      <div id="search-pager" class="pager"></div>
    </section>`;
  const results = document.getElementById("search-results") as HTMLElement;
  const pager = document.getElementById("search-pager") as HTMLElement;
  const queryInput = document.getElementById("search-query") as HTMLInputElement;
  const modeInput = document.getElementById("search-mode") as HTMLSelectElement;
  if (state.mode) modeInput.value = state.mode;
  const send = document.getElementById("search-send") as HTMLButtonElement;

  async function run(page: number): Promise<void> {
    const text = queryInput.value.trim();
    if (!text) return;
    state.query = text;
    state.mode = modeInput.value as SearchMode;
    state.page = page;
    setState(state);
    try {
      const response = await api.search(text, {
        k: SEARCH_K,
        page,
        mode: modeInput.value as SearchMode,
      });
      results.innerHTML = renderSearchResults(response, page, SEARCH_K);
      pager.innerHTML = renderPager(response.total, page, SEARCH_K);
      const prev = document.getElementById("prev-page") as HTMLButtonElement;
      const next = document.getElementById("next-page") as HTMLButtonElement;
      prev.onclick = () => void run(page - 1);
      next.onclick = () => void run(page + 1);
    } catch (error) {
      pager.innerHTML = "";
      errorBox(results, error, text);
    }
  }

  (document.getElementById("search-form") as HTMLFormElement).onsubmit = (e) => {
    e.preventDefault();
    void withPending(send, () => run(0));
  };
  if (state.query) {
    await withPending(send, () => run(state.page ?? 0));
  }
}

// --- analysis ----------------------------------------------------------------------

async function showAnalysis(state: ViewState): Promise<void> {
  let documents: DocumentInfo[] = [];
  try {
    documents = (await api.documents()).documents;
  } catch {
    // rendered below with an empty select; manage screen surfaces errors
  }
  const options = documents
    .map(
      (doc) =>
        `<option value="${doc.doc_id}" ` +
        `${doc.doc_id === state.docId ? "selected" : ""}>` +
        `${doc.source_path}</option>`,
    )
    .join("");
  app().innerHTML = `
    <section class="screen" id="analysis">
      <form id="analysis-form">
        <label>document <select id="analysis-doc">${options}</select></label>
        <label>unit
          <select id="analysis-unit">
            <option value="sentence">sentence</option>
            <option value="paragraph">paragraph</option>
            <option value="passage">passage</option>
          </select>
        </label>
        <label>schema <textarea id="analysis-schema" rows="6"></textarea></label>
        <label>template
          <textarea id="analysis-template" rows="2">Extract from: {unit_text}</textarea>
        </label>
        <button id="analysis-run" type="submit">run</button>
        <a id="analysis-csv" class="hidden" download="analysis.csv">download CSV</a>
      </form>
      <div id="analysis-result"></div>
    </section>`;
  (document.getElementById("analysis-schema") as HTMLTextAreaElement).value =
    DEFAULT_SCHEMA;
  const result = document.getElementById("analysis-result") as HTMLElement;
  const run = document.getElementById("analysis-run") as HTMLButtonElement;
  const csvLink = document.getElementById("analysis-csv") as HTMLAnchorElement;

  (document.getElementById("analysis-form") as HTMLFormElement).onsubmit = (e) => {
    e.preventDefault();
    void withPending(run, async () => {
      const docId = (document.getElementById("analysis-doc") as HTMLSelectElement)
        .value;
      const unit = (document.getElementById("analysis-unit") as HTMLSelectElement)
        .value;
      const schemaText = (
        document.getElementById("analysis-schema") as HTMLTextAreaElement
      ).value;
      const template = (
        document.getElementById("analysis-template") as HTMLTextAreaElement
      ).value;
      let schema: unknown;
      try {
        schema = JSON.parse(schemaText);
      } catch (error) {
        errorBox(result, new ApiRequestError({
          status: 0,
          code: "invalid_schema",
          message: `schema is not valid JSON: ${String(error)}`,
          detail: null,
        }));
        return;
      }
      state.docId = docId;
      setState(state);
      try {
        const response = await api.extract({
          doc_id: docId,
          unit,
          schema,
          template,
        });
        const fieldNames = Array.isArray((schema as { fields?: unknown }).fields)
          ? ((schema as { fields: { name: string }[] }).fields ?? []).map(
              (f) => f.name,
            )
          : [];
        result.innerHTML = renderAnalysisRows(response.rows, fieldNames);
        csvLink.href = api.extractCsvUrl(response.job_id);
        csvLink.classList.remove("hidden");
      } catch (error) {
        errorBox(result, error);
      }
    });
  };
}

// --- manage ---------------------------------------------------------------------------

async function showManage(state: ViewState): Promise<void> {
  app().innerHTML = `
    <section class="screen" id="manage">
      <div id="manage-health"></div>
      <form id="ingest-form">
        <input id="ingest-path" placeholder="Server directory to ingest">
        <button id="ingest-run" type="submit">ingest</button>
      </form>
      <div id="manage-error"></div>
      <div id="manage-documents"></div>
    </section>`;
  const healthSlot = document.getElementById("manage-health") as HTMLElement;
  const errorSlot = document.getElementById("manage-error") as HTMLElement;
  const docsSlot = document.getElementById("manage-documents") as HTMLElement;
  const pathInput = document.getElementById("ingest-path") as HTMLInputElement;
  const ingestRun = document.getElementById("ingest-run") as HTMLButtonElement;

  async function refresh(): Promise<void> {
    const [health, listing] = await Promise.all([api.health(), api.documents()]);
    healthSlot.innerHTML = renderHealthBadge(health);
    docsSlot.innerHTML = renderDocumentsTable(listing.documents);
    for (const button of docsSlot.querySelectorAll<HTMLButtonElement>(
      ".delete-doc",
    )) {
      button.onclick = () => {
        void withPending(button, async () => {
          try {
            await api.deleteDocument(button.dataset.docId ?? "");
            errorSlot.innerHTML = "";
            await refresh();
          } catch (error) {
            errorBox(errorSlot, error);
          }
        });
      };
    }
  }

  try {
    await refresh();
  } catch (error) {
    errorBox(errorSlot, error);
  }

  (document.getElementById("ingest-form") as HTMLFormElement).onsubmit = (e) => {
    e.preventDefault();
    const path = pathInput.value.trim();
    if (!validIngestPath(path)) {
      errorBox(errorSlot, new ApiRequestError({
        status: 0,
        code: "empty_path",
        message: "enter a server-side directory path",
        detail: null,
      }));
      return;
    }
    void withPending(ingestRun, async () => {
      try {
        await api.ingest(path);
        errorSlot.innerHTML = "";
        await refresh();
      } catch (error) {
        errorBox(errorSlot, error);
      }
    });
  };
}

// --- router ------------------------------------------------------------------------------

const SCREEN_RENDERERS: Record<string, (state: ViewState) => Promise<void>> = {
  prompts: showPrompts,
  qa: showQa,
  search: showSearch,
  analysis: showAnalysis,
  manage: showManage,
};

function highlightNav(screen: string): void {
  for (const link of document.querySelectorAll<HTMLAnchorElement>("nav a")) {
    link.classList.toggle("active", link.dataset.screen === screen);
  }
}

export async function route(): Promise<void> {
  const state = parseViewState(location.hash);
  highlightNav(state.screen);
  await SCREEN_RENDERERS[state.screen](state);
}

window.addEventListener("hashchange", () => void route());
window.addEventListener("DOMContentLoaded", () => void route());
