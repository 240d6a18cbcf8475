// DOM wiring for the operator console. Logic lives in the other modules;
// this file only moves state into elements and user clicks into API calls.

import { ApiClient, ApiError } from "./api.js";
import { buildOverlay, jitterRows, summaryLine, verdictBadge } from "./report.js";
import { EventStream } from "./sse.js";
import { SessionView } from "./session.js";
import type { Action, MarkerEvent, ProtocolEntry, Strategy } from "./types.js";

const api = new ApiClient("");
const view = new SessionView();
let stream: EventStream | null = null;
let sessionId: string | null = null;

const el = (id: string) => document.getElementById(id) as HTMLElement;
const banner = () => el("banner");
const eventList = () => el("event-list");

function setBanner(text: string, kind: "info" | "bad" | "ok"): void {
  banner().textContent = text;
  banner().className = `banner ${kind}`;
}

function fmtMs(ms: number): string {
  return ms >= 10_000 ? `${(ms / 1000).toFixed(1)} s` : `${ms.toFixed(0)} ms`;
}

async function refreshProtocols(): Promise<void> {
  try {
    const entries = await api.listProtocols();
    const select = el("protocol") as HTMLSelectElement;
    select.innerHTML = "";
    entries.filter((entry: ProtocolEntry) => entry.valid).forEach((entry) => {
      const option = document.createElement("option");
      option.value = entry.name ?? entry.file;
      option.textContent = `${entry.name} (${entry.blocks} blocks, ${fmtMs(entry.total_duration_ms ?? 0)})`;
      select.appendChild(option);
    });
    setBanner("connected", "ok");
    (el("start") as HTMLButtonElement).disabled = false;
  } catch {
    setBanner("service unreachable — start disabled", "bad");
    (el("start") as HTMLButtonElement).disabled = true;
  }
}

function renderEvent(event: MarkerEvent): void {
  const row = document.createElement("li");
  const origin = document.createElement("span");
  origin.className = `badge ${event.origin}`;
  origin.textContent = event.origin;
  row.appendChild(origin);
  if (event.late) {
    const late = document.createElement("span");
    late.className = "badge late";
    late.textContent = "late";
    row.appendChild(late);
  }
  row.appendChild(
    document.createTextNode(
      ` #${event.seq} code ${event.marker} · ${event.label} · ${fmtMs(event.actual_ms)}`,
    ),
  );
  eventList().appendChild(row);
  eventList().scrollTop = eventList().scrollHeight;
}

function renderControls(): void {
  (["pause", "resume", "abort", "manual_marker"] as Action[]).forEach((action) => {
    const button = el(`btn-${action}`) as HTMLButtonElement;
    button.disabled = !sessionId || !view.canIssue(action);
  });
  el("phase").textContent = view.phase;
  el("block").textContent = view.currentBlockLabel();
}

function tickCountdown(): void {
  el("countdown").textContent = fmtMs(view.remainingMs(Date.now()));
  renderControls();
}
setInterval(tickCountdown, 100);

async function start(): Promise<void> {
  const protocol = (el("protocol") as HTMLSelectElement).value;
  const strategy = (el("strategy") as HTMLSelectElement).value as Strategy;
  el("inline-error").textContent = "";
  try {
    const descriptor = await api.createSession({ protocol, strategy, sinks: ["null"] });
    sessionId = descriptor.id;
    view.applyHello(descriptor);
    view.events = [];
    eventList().innerHTML = "";
    el("report-panel").hidden = true;
    follow();
  } catch (error) {
    const message = error instanceof ApiError && error.isConflict
      ? `cannot start: ${error.message}`
      : `start failed: ${(error as Error).message}`;
    el("inline-error").textContent = message;
  }
}

function follow(): void {
  if (!sessionId) return;
  stream?.stop();
  stream = new EventStream("", sessionId, {
    onHello: (descriptor) => view.applyHello(descriptor),
    onMarker: (event) => {
      view.applyMarker(event, Date.now());
      renderEvent(event);
    },
    onEnd: async (end) => {
      view.applyEnd(end);
      renderControls();
      await showReport();
    },
    onStatus: (status) => {
      view.connection = status;
      setBanner(`stream: ${status}`, status === "live" || status === "ended" ? "ok" : "info");
    },
  });
  void stream.run();
}

async function control(action: Action): Promise<void> {
  if (!sessionId || !view.canIssue(action)) return;
  const code = action === "manual_marker"
    ? Number((el("manual-code") as HTMLInputElement).value || "9")
    : undefined;
  const ack = await api.control(sessionId, action, code);
  if (!ack.accepted) {
    // rejected transition: re-sync the view from the server snapshot
    el("inline-error").textContent = ack.reason ?? "rejected";
    view.setPhase(ack.state.phase, Date.now());
  } else {
    el("inline-error").textContent = "";
    if (action === "pause" || action === "resume") {
      view.setPhase(action === "pause" ? "paused" : "running", Date.now());
    }
  }
  renderControls();
}

async function showReport(): Promise<void> {
  if (!sessionId) return;
  try {
    const report = await api.getReport(sessionId);
    const overlay = buildOverlay(report);
    el("curve-expected").setAttribute("d", overlay.expectedPath);
    el("curve-actual").setAttribute("d", overlay.actualPath);
    (el("overlay-svg") as unknown as SVGSVGElement).setAttribute("viewBox", overlay.viewBox);
    const badge = verdictBadge(report);
    el("verdict").textContent = badge.text;
    el("verdict").className = `badge ${badge.kind}`;
    el("summary").textContent = summaryLine(report);
    const tbody = el("jitter-body");
    tbody.innerHTML = "";
    jitterRows(report).forEach((row) => {
      const tr = document.createElement("tr");
      tr.className = row.severity;
      tr.innerHTML = `<td>${row.seq}</td><td>${row.expected}</td><td>${row.actual}</td><td>${row.error}</td>`;
      tbody.appendChild(tr);
    });
    el("report-panel").hidden = false;
  } catch (error) {
    el("inline-error").textContent = `report unavailable: ${(error as Error).message}`;
  }
}

export function boot(): void {
  el("start").addEventListener("click", () => void start());
  el("btn-pause").addEventListener("click", () => void control("pause"));
  el("btn-resume").addEventListener("click", () => void control("resume"));
  el("btn-abort").addEventListener("click", () => void control("abort"));
  el("btn-manual_marker").addEventListener("click", () => void control("manual_marker"));
  void refreshProtocols();
  renderControls();
}

if (typeof document !== "undefined" && document.getElementById("start")) {
  boot();
}
