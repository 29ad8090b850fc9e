import { Window } from "happy-dom";

/** Parse rendered HTML into a real DOM for equivalence checks. */
export function parseDom(html: string) {
  const window = new Window();
  window.document.body.innerHTML = html;
  return window.document;
}
