/**
 * Browser entry point: binds the annotation flow to the page. Reads
 * `?session=<id>` and optional `?api=<base url>` from the query string.
 */
import { AnnotationApi } from "./api.js";
import { objectPanel, sharedScale } from "./barchart.js";
import { AnnotationFlow, FlowView } from "./state.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function renderCurve(curve: number[]): string {
  if (curve.length === 0) return "<p>No accuracy curve (no test pool bound).</p>";
  const points = curve
    .map((v, i) => `<li>round ${i}: ${(100 * v).toFixed(1)}%</li>`)
    .join("");
  return `<p>Test accuracy by round:</p><ul class="curve">${points}</ul>`;
}

function render(view: FlowView, flow: AnnotationFlow): void {
  const root = el("app");
  switch (view.kind) {
    case "connecting":
      root.innerHTML = `<p class="status">Connecting…</p>`;
      return;
    case "unreachable":
      root.innerHTML = `<div class="banner error">Service unreachable (${view.message}); retrying in ${Math.round(view.retryInMs / 1000)}s…</div>`;
      return;
    case "training":
      root.innerHTML = `<div class="status"><h2>Training…</h2><p>Round ${view.round}, ${view.labeled} answers used so far.</p>${renderCurve(view.curve)}</div>`;
      return;
    case "finished":
      root.innerHTML = `<div class="status"><h2>Session complete</h2><p>${view.labeled} triplets answered. Thank you!</p>${renderCurve(view.curve)}</div>`;
      return;
    case "question": {
      const q = view.query;
      const scale = sharedScale([
        q.anchor.features,
        q.option_j.features,
        q.option_k.features,
      ]);
      const pick = (side: "j" | "k") =>
        view.selected === side ? "option selected" : "option";
      root.innerHTML = `
        <div class="progress">Round ${view.round} — question ${view.position} of ${view.total}</div>
        <h2>Is <em>${q.anchor.id}</em> more like B or C?</h2>
        <div class="anchor">${objectPanel(`A — ${q.anchor.id}`, q.anchor.features, q.anchor.asset, scale)}</div>
        <div class="choices">
          <button id="pick-j" class="${pick("j")}">${objectPanel(`B — ${q.option_j.id}`, q.option_j.features, q.option_j.asset, scale)}</button>
          <button id="pick-k" class="${pick("k")}">${objectPanel(`C — ${q.option_k.id}`, q.option_k.features, q.option_k.asset, scale)}</button>
        </div>
        ${view.notice ? `<div class="banner warn">${view.notice}</div>` : ""}
        <button id="submit" ${view.selected === null || view.submitting ? "disabled" : ""}>
          ${view.submitting ? "Sending…" : "Submit answer"}
        </button>
        <p class="hint">Keyboard: ← picks B, → picks C, Enter submits.</p>`;
      el("pick-j").addEventListener("click", () => flow.select("j"));
      el("pick-k").addEventListener("click", () => flow.select("k"));
      el("submit").addEventListener("click", () => void flow.submit());
      return;
    }
  }
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (!sessionId) {
    el("app").innerHTML =
      `<div class="banner error">Add ?session=&lt;id&gt; to the URL to join an annotation session.</div>`;
    return;
  }
  const base = params.get("api") ?? "";
  const api = new AnnotationApi(base);
  const flow = new AnnotationFlow(api, sessionId, {
    onChange: (view) => render(view, flow),
  });
  window.addEventListener("keydown", (event) => flow.handleKey(event.key));
  void flow.start();
}

main();
