from __future__ import annotations

import random

import pytest

from markline.clocks import FakeClock
from markline.protocol import ProtocolError, expand, expected_timeline
from markline.scheduling import (
    RECORD_CSV_HEADER,
    ScriptedControl,
    Session,
    abort,
    manual_marker,
    pause,
    read_record_csv,
    resume,
    run_deadline,
    run_naive,
    write_record_csv,
)
from markline.transport import KeyEventSink, MarkerSink, MemorySink, NullSink, SinkError

from .conftest import protocol_from_source
from .genspec import random_spec
from .oracles import deadline_steps, naive_steps


class WallClockSink(MarkerSink):
    """Records the clock instant of every send (wall, not active, time)."""

    def __init__(self, clock):
        self.clock = clock
        self.sends: list[tuple[int, float]] = []

    def send(self, frame):
        self.sends.append((frame.code, self.clock.now()))


class FailAfter(MarkerSink):
    def __init__(self, good_sends: int):
        self.remaining = good_sends

    def send(self, frame):
        if self.remaining <= 0:
            raise SinkError("injected failure")
        self.remaining -= 1


def pairs(record):
    return [(e.scheduled_ms, e.actual_ms) for e in record.events]


class TestNaive:
    def test_zero_overhead_exact(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 3 { block tick T 100ms }\n"
        )
        record = run_naive(protocol, FakeClock(), NullSink())
        assert record.outcome == "completed"
        assert pairs(record) == [(0, 0), (100, 100), (200, 200)]

    def test_drift_law_matches_step_through_oracle(self, ten_tick_protocol):
        record = run_naive(ten_tick_protocol, FakeClock(per_event_overhead_ms=5), NullSink())
        oracle = naive_steps([100.0] * 10, overhead_ms=5.0)
        assert pairs(record) == oracle
        assert record.end_drift_ms == 45.0  # (n-1) * c

    def test_drift_law_general(self):
        for n, c in [(2, 1.0), (7, 3.0), (25, 0.5)]:
            protocol = protocol_from_source(
                f"protocol p\nmarker T=1\nrepeat {n} {{ block tick T 20ms }}\n"
            )
            record = run_naive(protocol, FakeClock(per_event_overhead_ms=c), NullSink())
            assert record.end_drift_ms == pytest.approx((n - 1) * c)

    def test_offset_markers_fire_at_block_end(self):
        protocol = protocol_from_source(
            "protocol p\nmarker A=1\nmarker E=9\nblock a A 100ms offset E\nblock b A 50ms\n"
        )
        record = run_naive(protocol, FakeClock(), NullSink())
        assert [(e.marker, e.scheduled_ms, e.actual_ms) for e in record.events] == [
            (1, 0, 0),
            (9, 100, 100),
            (1, 100, 100),
        ]


class TestDeadline:
    def test_overhead_does_not_accumulate(self, ten_tick_protocol):
        record = run_deadline(ten_tick_protocol, FakeClock(per_event_overhead_ms=5), NullSink())
        oracle = deadline_steps([100.0] * 10, overhead_ms=5.0)
        assert [(e.scheduled_ms, e.actual_ms, e.late) for e in record.events] == oracle
        assert all(e.drift_ms <= 5.0 for e in record.events)
        assert record.end_drift_ms <= 5.0

    def test_zero_overhead_equals_naive(self, ten_tick_protocol):
        naive = run_naive(ten_tick_protocol, FakeClock(), NullSink())
        deadline = run_deadline(ten_tick_protocol, FakeClock(), NullSink())
        assert pairs(naive) == pairs(deadline)
        assert [e.late for e in naive.events] == [e.late for e in deadline.events]
        assert naive.strategy == "naive" and deadline.strategy == "deadline"

    def test_stall_recovery_matches_oracle(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 8 { block tick T 100ms }\n"
        )
        clock = FakeClock(per_event_overhead_ms=5)
        clock.stall_at(210, 250)  # hiccup inside block 3
        record = run_deadline(protocol, clock, NullSink())
        oracle = deadline_steps([100.0] * 8, overhead_ms=5.0, stalls=[(210.0, 250.0)])
        assert [(e.scheduled_ms, e.actual_ms, e.late) for e in record.events] == oracle
        # late only until deadlines catch up, then drift returns to zero
        assert [e.late for e in record.events] == [
            False, False, False, True, True, False, False, False,
        ]
        assert record.events[-1].drift_ms <= 5.0

    def test_late_events_sent_never_skipped(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 5 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        clock.stall_at(150, 10_000)  # stall the whole remaining schedule away
        sink = MemorySink()
        record = run_deadline(protocol, clock, sink)
        assert record.outcome == "completed"
        assert len(sink.frames) == 5  # marker count always matches the protocol
        assert [e.late for e in record.events] == [False, False, True, True, True]


class TestControl:
    def test_abort_mid_run_keeps_prior_events(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 5 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        control = ScriptedControl(clock, [(150.0, abort())])
        record = run_naive(protocol, clock, NullSink(), control=control)
        assert record.outcome == "aborted"
        assert len(record.events) == 2  # blocks 1 and 2 only

    def test_pause_freezes_remaining_block_time(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 3 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        sink = WallClockSink(clock)
        control = ScriptedControl(clock, [(50.0, pause()), (250.0, resume())])
        record = run_deadline(protocol, clock, sink, control=control)
        assert record.outcome == "completed"
        # paused 200 ms at wall 50: block 1 completes 50 ms after resume
        assert sink.sends[1][1] == 300.0
        # active-time offsets are unaffected, so the run still verifies clean
        assert pairs(record) == [(0, 0), (100, 100), (200, 200)]

    def test_pause_shifts_all_remaining_deadlines(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 4 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        sink = WallClockSink(clock)
        control = ScriptedControl(clock, [(120.0, pause()), (200.0, resume())])
        run_deadline(protocol, clock, sink, control=control)
        assert [wall for _, wall in sink.sends] == [0.0, 100.0, 280.0, 380.0]

    def test_manual_marker_does_not_shift_protocol_events(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 3 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        control = ScriptedControl(clock, [(150.0, manual_marker(9))])
        record = run_deadline(protocol, clock, NullSink(), control=control)
        manual = [e for e in record.events if e.origin == "manual"]
        assert len(manual) == 1
        assert manual[0].marker == 9 and manual[0].actual_ms == 150.0
        protocol_pairs = [
            (e.scheduled_ms, e.actual_ms) for e in record.events if e.origin == "protocol"
        ]
        assert protocol_pairs == [(0, 0), (100, 100), (200, 200)]

    def test_manual_marker_consumes_wire_seq(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 2 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        sink = MemorySink()
        control = ScriptedControl(clock, [(50.0, manual_marker(9))])
        record = run_deadline(protocol, clock, sink, control=control)
        assert [f.code for f in sink.frames] == [1, 9, 1]
        assert [e.seq for e in record.events] == [0, 1, 2]

    def test_illegal_transitions_rejected_with_snapshot(self):
        protocol = protocol_from_source("protocol p\nmarker T=1\nblock tick T 50ms\n")
        session = Session(protocol, FakeClock(), NullSink())
        ack = session.control(resume())  # resume while pending
        assert not ack.accepted and ack.state.phase == "pending"
        record = session.run()
        assert record.outcome == "completed"
        ack = session.control(abort())  # abort when completed
        assert not ack.accepted
        assert ack.state.phase == "completed"
        ack = session.control(pause())
        assert not ack.accepted

    def test_abort_before_start(self):
        protocol = protocol_from_source("protocol p\nmarker T=1\nblock tick T 50ms\n")
        session = Session(protocol, FakeClock(), NullSink())
        assert session.control(abort()).accepted
        record = session.run()
        assert record.outcome == "aborted" and record.events == []

    def test_manual_marker_code_validated(self):
        protocol = protocol_from_source("protocol p\nmarker T=1\nblock tick T 50ms\n")
        session = Session(protocol, FakeClock(), NullSink())
        ack = session.control(manual_marker(0))
        assert not ack.accepted

    def test_pause_landing_on_a_block_boundary_delays_the_send(self):
        # a pause surfacing at the poll right before an onset must hold the
        # marker until resume, not let it slip out into a paused session
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 2 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        sink = WallClockSink(clock)
        control = ScriptedControl(clock, [(0.0, pause()), (50.0, resume())])
        record = run_naive(protocol, clock, sink, control=control)
        assert record.outcome == "completed"
        assert sink.sends[0][1] == 50.0  # first onset waited for the resume
        assert pairs(record) == [(0, 0), (100, 100)]  # active time unaffected

    def test_no_send_ever_happens_while_paused(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nmarker E=9\n"
            "repeat 3 { block tick T 100ms offset E }\n"
        )
        clock = FakeClock()
        session_box: list[Session] = []

        class PhaseCheckSink(MarkerSink):
            def send(self, frame):
                assert session_box[0].snapshot().phase != "paused"

        for pause_at in (0.0, 50.0, 100.0, 150.0, 199.0, 200.0):
            clock = FakeClock()
            control = ScriptedControl(
                clock, [(pause_at, pause()), (pause_at + 70.0, resume())]
            )
            session = Session(
                protocol, clock, PhaseCheckSink(), strategy="naive", control=control
            )
            session_box.clear()
            session_box.append(session)
            assert session.run().outcome == "completed"

    def test_snapshot_reports_pause_accumulation(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 2 { block tick T 100ms }\n"
        )
        clock = FakeClock()
        control = ScriptedControl(clock, [(50.0, pause()), (250.0, resume())])
        session = Session(protocol, clock, NullSink(), strategy="deadline", control=control)
        record = session.run()
        assert record.outcome == "completed"
        assert session.snapshot().pause_accumulated_ms == 200.0


class TestFailures:
    def test_sink_failure_aborts_with_failure_attached(self):
        protocol = protocol_from_source(
            "protocol p\nmarker T=1\nrepeat 5 { block tick T 10ms }\n"
        )
        record = run_naive(protocol, FakeClock(), FailAfter(2))
        assert record.outcome == "aborted"
        assert record.failure and "injected failure" in record.failure
        assert len(record.events) == 3  # two delivered plus the failed send

    def test_unmapped_key_code_aborts(self):
        protocol = protocol_from_source("protocol p\nmarker T=7\nblock tick T 10ms\n")
        record = run_deadline(protocol, FakeClock(), KeyEventSink({1: "a"}))
        assert record.outcome == "aborted"
        assert "no key mapping" in (record.failure or "")


class TestInvariants:
    def test_sequence_preservation_on_completion(self):
        rng = random.Random(8)
        checked = 0
        while checked < 25:
            spec = random_spec(rng, max_depth=2)
            try:
                protocol = expand(spec)
            except ProtocolError:
                continue
            if protocol.total_duration_ms > 10_000_000:
                continue
            checked += 1
            timeline = expected_timeline(protocol)
            for runner in (run_naive, run_deadline):
                record = runner(protocol, FakeClock(per_event_overhead_ms=2), NullSink())
                assert record.outcome == "completed"
                assert [e.marker for e in record.events] == [
                    e.marker for e in timeline.events
                ]

    def test_dispatch_count_equals_event_count(self):
        for n in (1, 10, 100):
            protocol = protocol_from_source(
                f"protocol p\nmarker T=1\nrepeat {n} {{ block tick T 10ms }}\n"
            )
            sink = MemorySink()
            record = run_deadline(protocol, FakeClock(), sink)
            assert len(sink.frames) == protocol.event_count == n
            assert len(record.events) == n

    def test_actual_offsets_non_decreasing(self, ten_tick_protocol):
        record = run_naive(ten_tick_protocol, FakeClock(per_event_overhead_ms=3), NullSink())
        actuals = [e.actual_ms for e in record.events]
        assert all(b >= a for a, b in zip(actuals, actuals[1:]))

    def test_zero_overhead_equivalence_over_random_protocols(self):
        rng = random.Random(17)
        checked = 0
        while checked < 20:
            spec = random_spec(rng, max_depth=2)
            try:
                protocol = expand(spec)
            except ProtocolError:
                continue
            checked += 1
            naive = run_naive(protocol, FakeClock(), NullSink())
            deadline = run_deadline(protocol, FakeClock(), NullSink())
            assert pairs(naive) == pairs(deadline)


class TestRecordCsv:
    def test_round_trip(self, tmp_path, ten_tick_protocol):
        record = run_naive(ten_tick_protocol, FakeClock(per_event_overhead_ms=5), NullSink())
        path = tmp_path / "record.csv"
        write_record_csv(record, path)
        lines = path.read_text().splitlines()
        assert lines[0] == RECORD_CSV_HEADER == "seq,scheduled_ms,actual_ms,marker,origin,late"
        loaded = read_record_csv(path)
        assert [(e.seq, e.scheduled_ms, e.actual_ms, e.marker, e.origin, e.late) for e in loaded.events] == [
            (e.seq, e.scheduled_ms, e.actual_ms, e.marker, e.origin, e.late) for e in record.events
        ]
