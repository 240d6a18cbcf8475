import { describe, expect, it } from "vitest";

import { buildOverlay, jitterRows, pathFrom, summaryLine, verdictBadge } from "../src/report.js";
import type { TimingReportPayload } from "../src/types.js";

function reportPayload(overrides: Partial<TimingReportPayload>): TimingReportPayload {
  return {
    session: "abc",
    outcome: "completed",
    failure: null,
    verdict: "equivalent",
    detail: "",
    tol_ms: 50,
    max_abs_jitter_ms: 0,
    mean_abs_jitter_ms: 0,
    end_drift_ms: 0,
    late_count: 0,
    per_event: [
      { seq: 0, expected_ms: 0, actual_ms: 0, error_ms: 0 },
      { seq: 1, expected_ms: 100, actual_ms: 105, error_ms: 5 },
    ],
    curve_expected: [
      [0, 0],
      [1, 100],
      [2, 200],
    ],
    curve_actual: [
      [0, 0],
      [1, 100],
      [2, 200],
    ],
    ...overrides,
  };
}

describe("overlay", () => {
  it("identical curves produce coinciding paths", () => {
    const overlay = buildOverlay(reportPayload({}));
    expect(overlay.expectedPath).toBe(overlay.actualPath);
    expect(overlay.expectedPath.startsWith("M")).toBe(true);
  });

  it("a drifting run pulls the actual path away from the expected one", () => {
    const overlay = buildOverlay(
      reportPayload({
        curve_actual: [
          [0, 0],
          [1, 110],
          [2, 245],
        ],
      }),
    );
    expect(overlay.actualPath).not.toBe(overlay.expectedPath);
    expect(overlay.maxMs).toBe(245);
  });

  it("path building is plain move/line segments", () => {
    expect(pathFrom([[10, 20], [30, 40]])).toBe("M10 20 L30 40");
    expect(pathFrom([])).toBe("");
  });
});

describe("verdict and table", () => {
  it("equivalent gets the ok badge", () => {
    expect(verdictBadge(reportPayload({})).kind).toBe("ok");
  });

  it("divergent gets the red badge with the server's detail", () => {
    const badge = verdictBadge(
      reportPayload({ verdict: "divergent", detail: "marker sequence mismatch at index 1" }),
    );
    expect(badge.kind).toBe("bad");
    expect(badge.text).toContain("mismatch at index 1");
  });

  it("rows outside tolerance are flagged", () => {
    const rows = jitterRows(
      reportPayload({
        tol_ms: 3,
        per_event: [
          { seq: 0, expected_ms: 0, actual_ms: 0, error_ms: 0 },
          { seq: 1, expected_ms: 100, actual_ms: 105, error_ms: 5 },
        ],
      }),
    );
    expect(rows.map((row) => row.severity)).toEqual(["ok", "warn"]);
    expect(rows[1].error).toBe("+5.0");
  });

  it("summary line carries the headline numbers", () => {
    const line = summaryLine(
      reportPayload({ max_abs_jitter_ms: 45, mean_abs_jitter_ms: 22.5, end_drift_ms: 45, late_count: 2 }),
    );
    expect(line).toContain("45.00 ms");
    expect(line).toContain("2 late");
  });
});
