"""Timeline comparison: jitter/drift statistics and the equivalence verdict.

Alignment is positional: the protocols here are strictly sequential, so event
k of the realized run answers to event k of the expected schedule, and a
marker mismatch at any index is a protocol violation, not a matching problem.
Manual (operator-injected) events are excluded before alignment so they can
never change a verdict.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .acquisition import ReceivedEvent
from .protocol import ExpectedTimeline, TimelineEvent
from .scheduling import ExecutionRecord, RecordedEvent, format_ms

EQUIVALENT = "equivalent"
DIVERGENT = "divergent"

DEFAULT_TOL_REAL_MS = 50.0  # commodity-hardware desk runs
DEFAULT_TOL_LOGICAL_MS = 0.0  # simulated clocks are exact


@dataclass(frozen=True)
class PerEvent:
    seq: int
    expected_ms: float
    actual_ms: float

    @property
    def error_ms(self) -> float:
        return self.actual_ms - self.expected_ms


@dataclass
class TimingReport:
    per_event: list[PerEvent]
    max_abs_jitter_ms: float
    mean_abs_jitter_ms: float
    end_drift_ms: float
    late_count: int
    verdict: str
    tol_ms: float
    detail: str = ""
    mismatch_index: int | None = None

    @property
    def equivalent(self) -> bool:
        return self.verdict == EQUIVALENT


@dataclass(frozen=True)
class CumulativeCurve:
    points: tuple[tuple[int, float], ...]

    @property
    def last_ms(self) -> float:
        return self.points[-1][1] if self.points else 0.0


Realized = Union[ExecutionRecord, Sequence]


def _realized_events(actual: Realized) -> list[tuple[float, int, bool]]:
    """Normalize to (offset_ms, code, late); manual events dropped."""
    if isinstance(actual, ExecutionRecord):
        return [(e.actual_ms, e.marker, e.late) for e in actual.protocol_events()]
    if isinstance(actual, ExpectedTimeline):
        actual = actual.events
    out: list[tuple[float, int, bool]] = []
    for item in actual:
        if isinstance(item, RecordedEvent):
            if item.origin == "protocol":
                out.append((item.actual_ms, item.marker, item.late))
        elif isinstance(item, ReceivedEvent):
            out.append((item.recv_offset_ms, item.frame.code, False))
        elif isinstance(item, TimelineEvent):
            out.append((float(item.offset_ms), item.marker, False))
        else:
            offset, code = item[0], item[1]
            out.append((float(offset), int(code), False))
    return out


def compare(expected: ExpectedTimeline, actual: Realized, tol_ms: float) -> TimingReport:
    """Positional comparison of a realized run against the expected schedule.

    Equivalent iff the lengths match, the marker sequences match, and the
    largest per-event deviation stays within tol_ms.
    """
    expected_events = list(expected.events)
    realized = _realized_events(actual)
    if not expected_events or not realized:
        raise ValueError("compare needs non-empty expected and actual timelines")

    n = min(len(expected_events), len(realized))
    per_event = [
        PerEvent(seq=k, expected_ms=float(expected_events[k].offset_ms), actual_ms=realized[k][0])
        for k in range(n)
    ]
    errors = np.array([p.error_ms for p in per_event])
    max_abs = float(np.max(np.abs(errors)))
    mean_abs = float(np.mean(np.abs(errors)))
    end_drift = float(errors[-1])
    late_count = sum(1 for _, _, late in realized if late)

    verdict, detail, mismatch = EQUIVALENT, "", None
    if len(expected_events) != len(realized):
        verdict = DIVERGENT
        detail = f"event count mismatch: expected {len(expected_events)}, got {len(realized)}"
    else:
        for k in range(n):
            if expected_events[k].marker != realized[k][1]:
                verdict = DIVERGENT
                mismatch = k
                detail = (
                    f"marker sequence mismatch at index {k}: "
                    f"expected {expected_events[k].marker}, got {realized[k][1]}"
                )
                break
        if verdict == EQUIVALENT and max_abs > tol_ms:
            verdict = DIVERGENT
            detail = f"max |jitter| {format_ms(max_abs)} ms exceeds tolerance {format_ms(tol_ms)} ms"

    return TimingReport(
        per_event=per_event,
        max_abs_jitter_ms=max_abs,
        mean_abs_jitter_ms=mean_abs,
        end_drift_ms=end_drift,
        late_count=late_count,
        verdict=verdict,
        tol_ms=tol_ms,
        detail=detail,
        mismatch_index=mismatch,
    )


def cumulative_curve(timeline: Union[ExpectedTimeline, ExecutionRecord, Sequence]) -> CumulativeCurve:
    """Event index against cumulative offset: the run as a rising staircase.

    Uniform-duration protocols give an exactly affine curve.
    """
    if isinstance(timeline, ExpectedTimeline):
        offsets = [float(e.offset_ms) for e in timeline.events]
    elif isinstance(timeline, ExecutionRecord):
        offsets = [e.actual_ms for e in timeline.protocol_events()]
    else:
        offsets = [o for o, _code, _late in _realized_events(timeline)]
    if not offsets:
        raise ValueError("cannot build a curve from an empty timeline")
    return CumulativeCurve(points=tuple((k, offset) for k, offset in enumerate(offsets)))


CURVE_CSV_HEADER = "k,cumulative_ms"
REPORT_CSV_HEADER = "seq,expected_ms,actual_ms,error_ms"


def write_curve_csv(curve: CumulativeCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVE_CSV_HEADER + "\n")
        for k, offset in curve.points:
            fh.write(f"{k},{format_ms(offset)}\n")


def read_curve_csv(path) -> CumulativeCurve:
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CURVE_CSV_HEADER:
            raise ValueError(f"not a curve file (header {header!r})")
        for line in fh:
            line = line.strip()
            if line:
                k, offset = line.split(",")
                points.append((int(k), float(offset)))
    return CumulativeCurve(points=tuple(points))


def render_report(
    report: TimingReport,
    expected_curve: CumulativeCurve,
    actual_curve: CumulativeCurve,
    out_dir,
) -> dict[str, str]:
    """Write report.csv plus both curve CSVs; returns the file paths.

    report.csv holds one row per aligned event followed by summary footer
    rows (metric name in the first column, value in the last).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.csv"),
        "curve_expected": os.path.join(out_dir, "curve_expected.csv"),
        "curve_actual": os.path.join(out_dir, "curve_actual.csv"),
    }
    with open(paths["report"], "w", encoding="utf-8") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for p in report.per_event:
            fh.write(
                f"{p.seq},{format_ms(p.expected_ms)},{format_ms(p.actual_ms)},"
                f"{format_ms(p.error_ms)}\n"
            )
        fh.write(f"max_abs_jitter_ms,,,{format_ms(report.max_abs_jitter_ms)}\n")
        fh.write(f"mean_abs_jitter_ms,,,{format_ms(report.mean_abs_jitter_ms)}\n")
        fh.write(f"end_drift_ms,,,{format_ms(report.end_drift_ms)}\n")
        fh.write(f"late_count,,,{report.late_count}\n")
        fh.write(f"tol_ms,,,{format_ms(report.tol_ms)}\n")
        fh.write(f"verdict,,,{report.verdict}\n")
    write_curve_csv(expected_curve, paths["curve_expected"])
    write_curve_csv(actual_curve, paths["curve_actual"])
    return paths
