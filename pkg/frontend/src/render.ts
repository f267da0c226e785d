/** DOM rendering. `renderFrame` is a pure function of one snapshot: it
 * rebuilds the panel from scratch, so stale state can never leak between
 * frames. The animation loop only moves dots via `updatePositions`. */

import { canJoin, canLeave } from "./guards.js";
import type { SnapshotView, VehicleView } from "./types.js";

export interface Controls {
  onJoin(node: number): void;
  onLeave(node: number): void;
}

const MODE_CLASS: Record<string, string> = {
  LEAD: "mode-lead",
  FREE: "mode-free",
  FORM: "mode-form",
  FOLLOW: "mode-follow",
};

function el(
  doc: Document,
  tag: string,
  attrs: Record<string, string>,
  text?: string,
): HTMLElement {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Linear blend of vehicle x positions between two snapshots. */
export function lerpPositions(
  prev: SnapshotView | null,
  next: SnapshotView,
  alpha: number,
): Map<number, number> {
  const xs = new Map<number, number>();
  const a = Math.max(0, Math.min(1, alpha));
  const before = new Map<number, number>();
  if (prev !== null) for (const v of prev.vehicles) before.set(v.id, v.x);
  for (const v of next.vehicles) {
    const old = before.get(v.id);
    xs.set(v.id, old === undefined ? v.x : old + (v.x - old) * a);
  }
  return xs;
}

function stripDot(doc: Document, v: VehicleView, span: [number, number]): HTMLElement {
  const dot = el(doc, "div", {
    class: `dot ${MODE_CLASS[v.mode] ?? ""}`,
    "data-vehicle-dot": String(v.id),
    "data-lane": v.lane,
  });
  dot.textContent = String(v.id);
  positionDot(dot, v.x, v.lane, span);
  return dot;
}

function positionDot(
  dot: HTMLElement,
  x: number,
  lane: string,
  span: [number, number],
): void {
  const [lo, hi] = span;
  const frac = hi > lo ? (x - lo) / (hi - lo) : 0.5;
  dot.style.left = `${(frac * 94 + 3).toFixed(2)}%`;
  dot.style.top = lane === "RIGHT" ? "58%" : "18%";
}

function vehicleRow(
  doc: Document,
  v: VehicleView,
  isLead: boolean,
  controls: Controls,
): HTMLElement {
  const row = el(doc, "tr", { "data-testid": `vehicle-row-${v.id}` });
  row.appendChild(el(doc, "td", {}, String(v.id)));
  row.appendChild(
    el(doc, "td", { "data-testid": `mode-${v.id}`, class: MODE_CLASS[v.mode] ?? "" }, v.mode),
  );
  row.appendChild(el(doc, "td", {}, v.x.toFixed(1)));
  row.appendChild(el(doc, "td", {}, v.v.toFixed(1)));
  row.appendChild(el(doc, "td", {}, v.lane));
  const actions = el(doc, "td", {});
  if (!isLead) {
    const join = el(doc, "button", { "data-testid": `join-${v.id}` }, "join") as HTMLButtonElement;
    join.disabled = !canJoin(v.mode);
    join.addEventListener("click", () => {
      if (canJoin(v.mode)) controls.onJoin(v.id);
    });
    const leave = el(doc, "button", { "data-testid": `leave-${v.id}` }, "leave") as HTMLButtonElement;
    leave.disabled = !canLeave(v.mode);
    leave.addEventListener("click", () => {
      if (canLeave(v.mode)) controls.onLeave(v.id);
    });
    actions.appendChild(join);
    actions.appendChild(leave);
  }
  row.appendChild(actions);
  return row;
}

/** Rebuild the dashboard for one snapshot. */
export function renderFrame(root: HTMLElement, snap: SnapshotView, controls: Controls): void {
  const doc = root.ownerDocument;
  root.textContent = "";

  const header = el(doc, "div", { class: "header" });
  header.appendChild(el(doc, "span", { "data-testid": "clock" }, `${(snap.t_ms / 1000).toFixed(1)} s`));
  header.appendChild(el(doc, "span", { "data-testid": "dissemination" }, snap.mode));
  root.appendChild(header);

  const xs = snap.vehicles.map((v) => v.x);
  const span: [number, number] = [Math.min(...xs) - 20, Math.max(...xs) + 20];
  const strip = el(doc, "div", { class: "strip", "data-testid": "strip" });
  strip.appendChild(el(doc, "div", { class: "lane-divider" }));
  for (const v of snap.vehicles) strip.appendChild(stripDot(doc, v, span));
  root.appendChild(strip);

  const chips = el(doc, "div", { class: "train", "data-testid": "train" });
  for (const id of snap.train) {
    chips.appendChild(el(doc, "span", { class: "chip", "data-testid": `train-chip-${id}` }, String(id)));
  }
  root.appendChild(chips);

  const table = el(doc, "table", { class: "vehicles" });
  const head = el(doc, "tr", {});
  for (const title of ["id", "mode", "x (m)", "v (m/s)", "lane", ""]) {
    head.appendChild(el(doc, "th", {}, title));
  }
  table.appendChild(head);
  const leadId = snap.train.length > 0 ? snap.train[0] : undefined;
  for (const v of [...snap.vehicles].sort((a, b) => a.id - b.id)) {
    table.appendChild(vehicleRow(doc, v, v.id === leadId || v.mode === "LEAD", controls));
  }
  root.appendChild(table);

  const links = el(doc, "ul", { class: "links", "data-testid": "mpr-links" });
  for (const [node, relay] of snap.mpr_links) {
    links.appendChild(el(doc, "li", {}, `${node} relays via ${relay}`));
  }
  root.appendChild(links);
}

/** Move the strip dots without rebuilding anything else. */
export function updatePositions(root: HTMLElement, snap: SnapshotView, xs: Map<number, number>): void {
  const lanes = new Map<number, string>();
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of snap.vehicles) {
    lanes.set(v.id, v.lane);
    const x = xs.get(v.id) ?? v.x;
    lo = Math.min(lo, x);
    hi = Math.max(hi, x);
  }
  const span: [number, number] = [lo - 20, hi + 20];
  for (const dot of Array.from(root.querySelectorAll<HTMLElement>("[data-vehicle-dot]"))) {
    const id = Number(dot.getAttribute("data-vehicle-dot"));
    const x = xs.get(id);
    if (x !== undefined) positionDot(dot, x, lanes.get(id) ?? "RIGHT", span);
  }
}

/** Status line for the control socket. */
export function setBanner(banner: HTMLElement, live: boolean): void {
  banner.textContent = live ? "live" : "connection lost — retrying";
  banner.setAttribute("data-live", live ? "yes" : "no");
  banner.className = live ? "banner live" : "banner down";
}

/** Short-lived error notices. */
export class Toaster {
  constructor(
    private readonly host: HTMLElement,
    private readonly ttlMs = 4000,
  ) {}

  push(message: string): void {
    const doc = this.host.ownerDocument;
    const toast = el(doc, "div", { class: "toast", "data-testid": "toast" }, message);
    this.host.appendChild(toast);
    setTimeout(() => toast.remove(), this.ttlMs);
  }
}
