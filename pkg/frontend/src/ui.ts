/** DOM construction and wiring for the supervisor dashboard.
 *
 * Everything renders from the SessionStore; no view state exists that did
 * not arrive from the server. Buttons call the API and then wait for the
 * resulting server event to change the view.
 */

import { ApiClient } from "./api.js";
import { LabelSubmitter, SessionStore } from "./state.js";
import { traceGeometry } from "./trace.js";
import type { ModelsInfo, RiskLabel } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";
export const TRACE_WIDTH = 720;
export const TRACE_HEIGHT = 160;

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface Dashboard {
  root: HTMLElement;
  render(): void;
  renderModels(models: ModelsInfo): void;
  submit(label: RiskLabel): Promise<void>;
  handleKey(key: string): void;
}

export interface DashboardOptions {
  episodeId?: string;
  onRetrain?: (scope: "gp-only" | "gp+encoder") => void;
}

export function buildDashboard(
  doc: Document,
  store: SessionStore,
  api: ApiClient,
  opts: DashboardOptions = {},
): Dashboard {
  const submitter = new LabelSubmitter(api, store.sessionId);
  const root = el(doc, "div", "dashboard");

  const header = el(doc, "div", "header");
  const phaseChip = el(doc, "span", "phase-chip");
  const connChip = el(doc, "span", "conn-chip");
  header.append(
    el(doc, "span", "session-id", `session ${store.sessionId}`),
    phaseChip,
    connChip,
  );

  const svg = doc.createElementNS(SVG_NS, "svg");
  svg.setAttribute("class", "risk-trace");
  svg.setAttribute("viewBox", `0 0 ${TRACE_WIDTH} ${TRACE_HEIGHT}`);

  const frameBox = el(doc, "div", "frame-box");
  const frameImg = el(doc, "img", "current-frame");
  const reconBadge = el(doc, "span", "recon-badge", "reconstruction poor");
  reconBadge.hidden = true;
  frameBox.append(frameImg, reconBadge);

  const banner = el(doc, "div", "pause-banner");
  banner.hidden = true;
  const bannerText = el(doc, "span", "pause-text");
  const confirmBtn = el(doc, "button", "confirm-risky", "Confirm-Risky (R)");
  const safeBtn = el(doc, "button", "mark-safe", "Mark-Safe (S)");
  banner.append(bannerText, confirmBtn, safeBtn);

  const errorLine = el(doc, "div", "error-line");
  errorLine.hidden = true;

  root.append(header, svg, frameBox, banner, errorLine);

  async function submit(label: RiskLabel): Promise<void> {
    const frame = store.pendingFrame;
    if (frame === null) return;
    errorLine.hidden = true;
    try {
      await submitter.submit(frame, label);
    } catch (err) {
      errorLine.textContent = String(err instanceof Error ? err.message : err);
      errorLine.hidden = false;
    }
  }

  confirmBtn.addEventListener("click", () => void submit("risky"));
  safeBtn.addEventListener("click", () => void submit("safe"));

  function handleKey(key: string): void {
    if (store.phase !== "PAUSED_AWAITING_LABEL") return;
    if (key === "r" || key === "R") void submit("risky");
    if (key === "s" || key === "S") void submit("safe");
  }

  function render(): void {
    phaseChip.textContent = store.phase;
    phaseChip.dataset.phase = store.phase;
    connChip.textContent = store.connected ? "live" : "disconnected";

    while (svg.firstChild) svg.removeChild(svg.firstChild);
    const geo = traceGeometry(
      store.trace(),
      store.gaps,
      TRACE_WIDTH,
      TRACE_HEIGHT,
    );
    const tauLine = doc.createElementNS(SVG_NS, "line");
    tauLine.setAttribute("class", "tau-line");
    tauLine.setAttribute("x1", "0");
    tauLine.setAttribute("x2", String(TRACE_WIDTH));
    tauLine.setAttribute("y1", String(geo.thresholdY));
    tauLine.setAttribute("y2", String(geo.thresholdY));
    svg.append(tauLine);
    const curve = doc.createElementNS(SVG_NS, "polyline");
    curve.setAttribute("class", "risk-curve");
    curve.setAttribute("points", geo.curve);
    svg.append(curve);
    for (const run of geo.flaggedRuns) {
      const flagged = doc.createElementNS(SVG_NS, "polyline");
      flagged.setAttribute("class", "flagged-run");
      flagged.setAttribute("points", run);
      svg.append(flagged);
    }
    for (const gx of geo.gapXs) {
      const gap = doc.createElementNS(SVG_NS, "line");
      gap.setAttribute("class", "gap-marker");
      gap.setAttribute("x1", String(gx));
      gap.setAttribute("x2", String(gx));
      gap.setAttribute("y1", "0");
      gap.setAttribute("y2", String(TRACE_HEIGHT));
      svg.append(gap);
    }

    const last = store.events.at(-1);
    if (opts.episodeId && last) {
      frameImg.setAttribute(
        "src",
        api.frameUrl(opts.episodeId, last.frame_index),
      );
    }
    reconBadge.hidden = !(last && last.recon_unreliable === true);

    if (store.phase === "PAUSED_AWAITING_LABEL" && store.pendingFrame !== null) {
      bannerText.textContent = `Execution paused at frame ${store.pendingFrame} — confirm or reject the detected fault`;
      banner.hidden = false;
    } else {
      banner.hidden = true;
    }
  }

  // --- retrain panel --------------------------------------------------------

  const panel = el(doc, "div", "retrain-panel");
  const versionList = el(doc, "ul", "version-list");
  const gpBtn = el(doc, "button", "retrain-gp", "Retrain (risk model only)");
  const fullBtn = el(doc, "button", "retrain-full", "Retrain (encoder + risk model)");
  const progress = el(doc, "span", "retrain-progress", "retraining…");
  progress.hidden = true;
  panel.append(versionList, gpBtn, fullBtn, progress);
  root.append(panel);

  gpBtn.addEventListener("click", () => opts.onRetrain?.("gp-only"));
  fullBtn.addEventListener("click", () => opts.onRetrain?.("gp+encoder"));

  function renderModels(models: ModelsInfo): void {
    while (versionList.firstChild) versionList.removeChild(versionList.firstChild);
    for (const v of models.versions) {
      const episodes = Object.entries(v.trained_on)
        .map(([skill, ids]) => `${skill}: ${ids.join(", ")}`)
        .join("; ");
      versionList.append(
        el(doc, "li", "version-row", `v${v.version} — trained on ${episodes}`),
      );
    }
    gpBtn.disabled = models.retrain_running;
    fullBtn.disabled = models.retrain_running;
    const tip = models.retrain_running
      ? "a retrain is already in progress"
      : "";
    gpBtn.title = tip;
    fullBtn.title = tip;
    progress.hidden = !models.retrain_running;
  }

  store.subscribe(render);
  render();
  return { root, render, renderModels, submit, handleKey };
}
