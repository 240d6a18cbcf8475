// Report view model: cumulative-curve overlay as SVG paths plus a jitter table.

import type { TimingReportPayload } from "./types.js";

export interface ChartBox {
  width: number;
  height: number;
  pad: number;
}

export const DEFAULT_BOX: ChartBox = { width: 640, height: 320, pad: 32 };

export interface Overlay {
  expectedPath: string;
  actualPath: string;
  viewBox: string;
  maxK: number;
  maxMs: number;
}

function scale(points: [number, number][], maxK: number, maxMs: number, box: ChartBox) {
  const spanX = box.width - 2 * box.pad;
  const spanY = box.height - 2 * box.pad;
  return points.map(([k, ms]) => {
    const x = box.pad + (maxK === 0 ? 0 : (k / maxK) * spanX);
    const y = box.height - box.pad - (maxMs === 0 ? 0 : (ms / maxMs) * spanY);
    return [Number(x.toFixed(2)), Number(y.toFixed(2))] as [number, number];
  });
}

export function pathFrom(points: [number, number][]): string {
  if (!points.length) return "";
  return points
    .map(([x, y], index) => `${index === 0 ? "M" : "L"}${x} ${y}`)
    .join(" ");
}

/** Expected and actual cumulative curves on one shared scale. */
export function buildOverlay(report: TimingReportPayload, box: ChartBox = DEFAULT_BOX): Overlay {
  const all = [...report.curve_expected, ...report.curve_actual];
  const maxK = Math.max(1, ...all.map(([k]) => k));
  const maxMs = Math.max(1, ...all.map(([, ms]) => ms));
  return {
    expectedPath: pathFrom(scale(report.curve_expected, maxK, maxMs, box)),
    actualPath: pathFrom(scale(report.curve_actual, maxK, maxMs, box)),
    viewBox: `0 0 ${box.width} ${box.height}`,
    maxK,
    maxMs,
  };
}

export interface JitterRow {
  seq: number;
  expected: string;
  actual: string;
  error: string;
  severity: "ok" | "warn";
}

export function jitterRows(report: TimingReportPayload): JitterRow[] {
  return report.per_event.map((row) => ({
    seq: row.seq,
    expected: row.expected_ms.toFixed(1),
    actual: row.actual_ms.toFixed(1),
    error: `${row.error_ms >= 0 ? "+" : ""}${row.error_ms.toFixed(1)}`,
    severity: Math.abs(row.error_ms) > report.tol_ms ? "warn" : "ok",
  }));
}

export function verdictBadge(report: TimingReportPayload): { text: string; kind: "ok" | "bad" } {
  return report.verdict === "equivalent"
    ? { text: `equivalent (tol ${report.tol_ms} ms)`, kind: "ok" }
    : { text: `divergent: ${report.detail || "outside tolerance"}`, kind: "bad" };
}

export function summaryLine(report: TimingReportPayload): string {
  return (
    `max |jitter| ${report.max_abs_jitter_ms.toFixed(2)} ms · ` +
    `mean ${report.mean_abs_jitter_ms.toFixed(2)} ms · ` +
    `end drift ${report.end_drift_ms.toFixed(2)} ms · ` +
    `${report.late_count} late`
  );
}
