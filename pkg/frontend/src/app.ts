// Session view: renders service snapshots into four panels (map,
// question, IG bars, ARI curve) and round-trips every mutation through
// the HTTP API. No optimistic updates: the screen always reflects the
// last snapshot fetched.

import { ApiClient, ApiError } from "./api.js";
import type { StateSnapshot } from "./types.js";
import { ariSeries, currentAriText, igBars, mapGlyphs } from "./viewmodel.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const MAP_W = 480;
const MAP_H = 360;
const CHART_W = 360;
const CHART_H = 160;

export class SessionView {
  sessionId: string | null = null;
  snapshot: StateSnapshot | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  private banner!: HTMLElement;
  private stepCounter!: HTMLElement;
  private ariValue!: HTMLElement;
  private mapSvg!: SVGSVGElement;
  private questionText!: HTMLElement;
  private answerInput!: HTMLInputElement;
  private responderSelect!: HTMLSelectElement;
  private askButton!: HTMLButtonElement;
  private answerButton!: HTMLButtonElement;
  private answerError!: HTMLElement;
  private igPanel!: HTMLElement;
  private ariSvg!: SVGSVGElement;
  private completionBanner!: HTMLElement;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private doc: Document,
  ) {
    this.mount();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, parent?: Element,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    if (className) node.className = className;
    (parent ?? this.root).appendChild(node);
    return node;
  }

  private mount(): void {
    this.banner = this.el("div", "banner hidden");
    const header = this.el("div", "header");
    this.stepCounter = this.el("span", "step-counter", header);
    this.ariValue = this.el("span", "ari-value", header);
    this.completionBanner = this.el("div", "completion hidden");

    const columns = this.el("div", "columns");
    const left = this.el("div", "map-panel", columns);
    this.mapSvg = this.doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
    this.mapSvg.setAttribute("viewBox", `0 0 ${MAP_W} ${MAP_H}`);
    this.mapSvg.setAttribute("class", "map");
    left.appendChild(this.mapSvg);

    const right = this.el("div", "side-panels", columns);
    const questionPanel = this.el("div", "question-panel", right);
    this.questionText = this.el("p", "question-text", questionPanel);
    this.askButton = this.el("button", "ask-button", questionPanel);
    this.askButton.textContent = "Ask";
    this.askButton.addEventListener("click", () => void this.ask());
    const form = this.el("div", "answer-form", questionPanel);
    this.answerInput = this.el("input", "answer-input", form);
    this.answerInput.placeholder = "Type the answer…";
    this.responderSelect = this.el("select", "responder-select", form);
    this.answerButton = this.el("button", "answer-button", form);
    this.answerButton.textContent = "Answer";
    this.answerButton.addEventListener("click", () => void this.submitAnswer());
    this.answerError = this.el("p", "answer-error hidden", questionPanel);

    this.igPanel = this.el("div", "ig-panel", right);
    const metrics = this.el("div", "metrics-panel", right);
    this.ariSvg = this.doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
    this.ariSvg.setAttribute("viewBox", `0 0 ${CHART_W} ${CHART_H}`);
    this.ariSvg.setAttribute("class", "ari-chart");
    metrics.appendChild(this.ariSvg);
  }

  async start(scenario: string, config?: Record<string, unknown>): Promise<void> {
    const handle = await this.api.createSession(scenario, config);
    this.sessionId = handle.session_id;
    await this.refresh();
  }

  async attach(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    await this.refresh();
  }

  startPolling(intervalMs = 1000): void {
    this.stopPolling();
    this.timer = setInterval(() => void this.refresh(), intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    try {
      const snapshot = await this.api.getState(this.sessionId);
      this.banner.classList.add("hidden");
      this.render(snapshot);
    } catch (err) {
      if (err instanceof ApiError && err.code === "unreachable") {
        this.showBanner("Service unreachable, retrying…");
        return;
      }
      throw err;
    }
  }

  async ask(): Promise<void> {
    if (!this.sessionId) return;
    try {
      await this.api.ask(this.sessionId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // stale button state; the refresh below re-syncs it
      } else {
        throw err;
      }
    }
    await this.refresh();
  }

  async submitAnswer(): Promise<void> {
    if (!this.sessionId) return;
    const text = this.answerInput.value;
    const responder = this.responderSelect.value;
    try {
      await this.api.answer(this.sessionId, text, responder);
      this.answerInput.value = "";
      this.answerError.classList.add("hidden");
      this.answerError.textContent = "";
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        // keep the input for correction
        this.answerError.textContent = `Could not interpret: ${err.detail ?? err.message}`;
        this.answerError.classList.remove("hidden");
        await this.refresh();
        return;
      }
      throw err;
    }
    await this.refresh();
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.classList.remove("hidden");
  }

  render(snapshot: StateSnapshot): void {
    this.snapshot = snapshot;
    this.stepCounter.textContent = `Step ${snapshot.step}`;
    this.ariValue.textContent = `ARI ${currentAriText(snapshot)}`;
    this.renderUsers(snapshot);
    this.renderMap(snapshot);
    this.renderQuestion(snapshot);
    this.renderIg(snapshot);
    this.renderAri(snapshot);
    this.completionBanner.textContent = snapshot.completed
      ? "All candidates answered — session complete."
      : "";
    this.completionBanner.classList.toggle("hidden", !snapshot.completed);
  }

  private renderUsers(snapshot: StateSnapshot): void {
    const current = this.responderSelect.value;
    while (this.responderSelect.firstChild) {
      this.responderSelect.removeChild(this.responderSelect.firstChild);
    }
    for (const user of snapshot.users) {
      const option = this.doc.createElement("option");
      option.value = user;
      option.textContent = user;
      this.responderSelect.appendChild(option);
    }
    if (snapshot.users.includes(current)) this.responderSelect.value = current;
  }

  private renderMap(snapshot: StateSnapshot): void {
    while (this.mapSvg.firstChild) this.mapSvg.removeChild(this.mapSvg.firstChild);
    for (const glyph of mapGlyphs(snapshot, MAP_W, MAP_H)) {
      const group = this.doc.createElementNS(SVG_NS, "g");
      group.setAttribute("class", [
        "glyph",
        glyph.isCandidate ? "candidate" : "",
        glyph.isTarget ? "target" : "",
      ].join(" ").trim());
      group.setAttribute("data-object-id", String(glyph.objectId));
      const size = glyph.isTarget ? 11 : 8;
      group.appendChild(this.glyphShape(glyph.shape, glyph.cx, glyph.cy, size, glyph.fill));
      const label = this.doc.createElementNS(SVG_NS, "text");
      label.setAttribute("x", String(glyph.cx + size + 2));
      label.setAttribute("y", String(glyph.cy + 4));
      label.setAttribute("class", "glyph-label");
      label.textContent = glyph.answer ? `${glyph.label} (${glyph.answer})` : glyph.label;
      group.appendChild(label);
      this.mapSvg.appendChild(group);
    }
  }

  private glyphShape(shape: string, cx: number, cy: number, size: number, fill: string) {
    if (shape === "circle") {
      const node = this.doc.createElementNS(SVG_NS, "circle");
      node.setAttribute("cx", String(cx));
      node.setAttribute("cy", String(cy));
      node.setAttribute("r", String(size));
      node.setAttribute("fill", fill);
      return node;
    }
    if (shape === "square") {
      const node = this.doc.createElementNS(SVG_NS, "rect");
      node.setAttribute("x", String(cx - size));
      node.setAttribute("y", String(cy - size));
      node.setAttribute("width", String(2 * size));
      node.setAttribute("height", String(2 * size));
      node.setAttribute("fill", fill);
      return node;
    }
    const points = shape === "triangle"
      ? [[cx, cy - size], [cx - size, cy + size], [cx + size, cy + size]]
      : [[cx, cy - size], [cx + size, cy], [cx, cy + size], [cx - size, cy]];
    const node = this.doc.createElementNS(SVG_NS, "polygon");
    node.setAttribute("points", points.map((p) => p.join(",")).join(" "));
    node.setAttribute("fill", fill);
    return node;
  }

  private renderQuestion(snapshot: StateSnapshot): void {
    if (snapshot.question) {
      this.questionText.textContent = snapshot.question.question_text;
      this.questionText.setAttribute("data-target", String(snapshot.question.target_object_id));
    } else {
      this.questionText.textContent = snapshot.completed
        ? "No more questions."
        : "Press Ask to get the next question.";
      this.questionText.removeAttribute("data-target");
    }
    const askDisabled = snapshot.question !== null || snapshot.completed;
    this.askButton.disabled = askDisabled;
    this.answerButton.disabled = snapshot.question === null;
    this.answerInput.disabled = snapshot.question === null;
  }

  private renderIg(snapshot: StateSnapshot): void {
    while (this.igPanel.firstChild) this.igPanel.removeChild(this.igPanel.firstChild);
    const heading = this.el("h3", "ig-heading", this.igPanel);
    heading.textContent = "Information gain per candidate";
    for (const bar of igBars(snapshot)) {
      const row = this.el("div", "ig-row", this.igPanel);
      row.setAttribute("data-object-id", String(bar.objectId));
      const label = this.el("span", "ig-label", row);
      label.textContent = `#${bar.objectId}`;
      const track = this.el("div", "ig-track", row);
      const fill = this.el("div", "ig-fill", track);
      fill.style.width = `${Math.round(bar.fraction * 100)}%`;
      const value = this.el("span", "ig-value", row);
      value.textContent = bar.exactText;
    }
  }

  private renderAri(snapshot: StateSnapshot): void {
    while (this.ariSvg.firstChild) this.ariSvg.removeChild(this.ariSvg.firstChild);
    const points = ariSeries(snapshot, CHART_W, CHART_H);
    const line = this.doc.createElementNS(SVG_NS, "polyline");
    line.setAttribute("points", points.map((p) => `${p.x},${p.y}`).join(" "));
    line.setAttribute("class", "ari-line");
    line.setAttribute("fill", "none");
    this.ariSvg.appendChild(line);
    for (const point of points) {
      const dot = this.doc.createElementNS(SVG_NS, "circle");
      dot.setAttribute("cx", String(point.x));
      dot.setAttribute("cy", String(point.y));
      dot.setAttribute("r", "3");
      dot.setAttribute("class", "ari-dot");
      dot.setAttribute("data-step", String(point.step));
      dot.setAttribute("data-ari", point.exactText);
      this.ariSvg.appendChild(dot);
    }
  }
}
