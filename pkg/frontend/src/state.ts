/**
 * View state <-> URL hash. The URL is the only client-side store: screen
 * plus primary parameters are encoded so a reload (or shared link)
 * restores the view.
 */

export type Screen = "prompts" | "qa" | "search" | "analysis" | "manage";

export interface ViewState {
  screen: Screen;
  sessionId?: string;
  query?: string;
  mode?: "sparse" | "dense" | "hybrid";
  page?: number;
  docId?: string;
}

const SCREENS: Screen[] = ["prompts", "qa", "search", "analysis", "manage"];

export function parseViewState(hash: string): ViewState {
  const trimmed = hash.replace(/^#\/?/, "");
  const [screenPart, queryPart] = trimmed.split("?", 2);
  const screen = (SCREENS as string[]).includes(screenPart)
    ? (screenPart as Screen)
    : "prompts";
  const state: ViewState = { screen };
  const params = new URLSearchParams(queryPart ?? "");
  const session = params.get("session");
  if (session) state.sessionId = session;
  const q = params.get("q");
  if (q) state.query = q;
  const mode = params.get("mode");
  if (mode === "sparse" || mode === "dense" || mode === "hybrid") {
    state.mode = mode;
  }
  const page = params.get("page");
  if (page !== null && /^\d+$/.test(page)) state.page = Number(page);
  const doc = params.get("doc");
  if (doc) state.docId = doc;
  return state;
}

/** Client-side guard for the manage screen's ingest form. */
export function validIngestPath(path: string): boolean {
  return path.trim().length > 0;
}

export function encodeViewState(state: ViewState): string {
  const params = new URLSearchParams();
  if (state.sessionId) params.set("session", state.sessionId);
  if (state.query) params.set("q", state.query);
  if (state.mode) params.set("mode", state.mode);
  if (state.page !== undefined && state.page > 0) {
    params.set("page", String(state.page));
  }
  if (state.docId) params.set("doc", state.docId);
  const suffix = params.toString();
  return `#/${state.screen}${suffix ? "?" + suffix : ""}`;
}
