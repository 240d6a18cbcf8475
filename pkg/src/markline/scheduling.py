"""Session execution: two dispatch strategies against a clock and a sink.

The naive strategy waits each block's duration *after* the send completes,
so per-event cost accumulates into end-of-run drift — preserved on purpose,
because the drift-free alternative is only meaningful next to it. The
deadline strategy pins every event to an absolute offset from session start
(pause time excluded), so cost does not accumulate; an event whose deadline
already passed is sent immediately and flagged late, never skipped, so the
marker count always matches the protocol.

Offsets in the record are "active" milliseconds: monotonic time since start
minus any paused span. Control commands arrive over an ordered channel and
are polled at every send and at least every 10 ms during waits.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .clocks import Clock
from .protocol import Protocol
from .transport import MarkerSender, MarkerSink

POLL_SLICE_MS = 10.0
LATE_TOLERANCE_MS = 1.0  # one clock resolution

PENDING = "pending"
RUNNING = "running"
PAUSED = "paused"
ABORTED = "aborted"
COMPLETED = "completed"

NAIVE = "naive"
DEADLINE = "deadline"
STRATEGIES = (NAIVE, DEADLINE)

# command -> phases in which it is legal
_LEGAL = {
    "pause": (RUNNING,),
    "resume": (PAUSED,),
    "abort": (PENDING, RUNNING, PAUSED),
    "manual_marker": (RUNNING, PAUSED),
}


@dataclass(frozen=True)
class Command:
    action: str
    code: int | None = None


def pause() -> Command:
    return Command("pause")


def resume() -> Command:
    return Command("resume")


def abort() -> Command:
    return Command("abort")


def manual_marker(code: int) -> Command:
    return Command("manual_marker", code=code)


class ControlSource:
    """Ordered source of session commands, polled from the session context."""

    def poll(self) -> Command | None:
        raise NotImplementedError


class ControlChannel(ControlSource):
    """Thread-safe FIFO feeding a session from other contexts."""

    def __init__(self):
        self._q: queue.SimpleQueue[Command] = queue.SimpleQueue()

    def push(self, command: Command) -> None:
        self._q.put(command)

    def poll(self) -> Command | None:
        try:
            return self._q.get_nowait()
        except queue.Empty:
            return None


class ScriptedControl(ControlSource):
    """Test double: fires each (at_ms, command) once the clock reaches it."""

    def __init__(self, clock: Clock, schedule: Iterable[tuple[float, Command]]):
        self._clock = clock
        self._pending = sorted(schedule, key=lambda item: item[0])

    def poll(self) -> Command | None:
        if self._pending and self._clock.now() >= self._pending[0][0]:
            return self._pending.pop(0)[1]
        return None


@dataclass(frozen=True)
class SessionSnapshot:
    phase: str
    current_block_index: int
    started_at_ms: float | None
    pause_accumulated_ms: float
    events_recorded: int
    outcome: str | None


@dataclass(frozen=True)
class ControlAck:
    accepted: bool
    state: SessionSnapshot
    reason: str | None = None


@dataclass(frozen=True, slots=True)
class RecordedEvent:
    seq: int
    scheduled_ms: float
    actual_ms: float
    marker: int
    origin: str  # "protocol" | "manual"
    late: bool
    label: str = ""
    block_index: int = -1
    block_duration_ms: float = 0.0

    @property
    def drift_ms(self) -> float:
        return self.actual_ms - self.scheduled_ms


@dataclass
class ExecutionRecord:
    strategy: str
    outcome: str  # "completed" | "aborted"
    events: list[RecordedEvent] = field(default_factory=list)
    failure: str | None = None
    protocol_name: str = ""

    def protocol_events(self) -> list[RecordedEvent]:
        return [e for e in self.events if e.origin == "protocol"]

    @property
    def end_drift_ms(self) -> float:
        protocol_events = self.protocol_events()
        return protocol_events[-1].drift_ms if protocol_events else 0.0


RECORD_CSV_HEADER = "seq,scheduled_ms,actual_ms,marker,origin,late"


def format_ms(value: float) -> str:
    """Canonical millisecond formatting: integral values print as integers,
    the rest with 3 decimals, so simulated output is byte-stable."""
    rounded = round(value)
    if abs(value - rounded) < 1e-9:
        return str(int(rounded))
    return f"{value:.3f}"


def write_record_csv(record: ExecutionRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECORD_CSV_HEADER + "\n")
        for e in record.events:
            fh.write(
                f"{e.seq},{format_ms(e.scheduled_ms)},{format_ms(e.actual_ms)},"
                f"{e.marker},{e.origin},{int(e.late)}\n"
            )


def read_record_csv(path) -> ExecutionRecord:
    record = ExecutionRecord(strategy="", outcome="")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RECORD_CSV_HEADER:
            raise ValueError(f"not an execution record file (header {header!r})")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            seq, scheduled, actual, marker, origin, late = line.split(",")
            record.events.append(
                RecordedEvent(
                    seq=int(seq),
                    scheduled_ms=float(scheduled),
                    actual_ms=float(actual),
                    marker=int(marker),
                    origin=origin,
                    late=bool(int(late)),
                )
            )
    return record


class Session:
    """One protocol execution. Runs on a single context; other contexts may
    push control commands and read atomic snapshots."""

    def __init__(
        self,
        protocol: Protocol,
        clock: Clock,
        sink: MarkerSink,
        strategy: str = DEADLINE,
        control: ControlSource | None = None,
        on_event: Callable[[RecordedEvent], None] | None = None,
    ):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if not protocol.blocks:
            raise ValueError("protocol has no blocks; not runnable")
        self.protocol = protocol
        self.clock = clock
        self.strategy = strategy
        self._sender = MarkerSender(sink)
        self._channel = ControlChannel()
        self._extra_control = control
        self._on_event = on_event
        self._lock = threading.Lock()
        self._phase = PENDING
        self._current_block_index = -1
        self._t0: float | None = None
        self._pause_accum = 0.0
        self._pause_started: float | None = None
        self._events: list[RecordedEvent] = []
        self._outcome: str | None = None
        self._failure: str | None = None
        self._current_label = ""
        self._current_duration = 0.0

    # -- external surface ---------------------------------------------------

    def snapshot(self) -> SessionSnapshot:
        with self._lock:
            return SessionSnapshot(
                phase=self._phase,
                current_block_index=self._current_block_index,
                started_at_ms=self._t0,
                pause_accumulated_ms=self._pause_accum,
                events_recorded=len(self._events),
                outcome=self._outcome,
            )

    def control(self, command: Command) -> ControlAck:
        """Validate against the current phase and enqueue. The runner applies
        commands at poll points and re-checks legality there."""
        with self._lock:
            phase = self._phase
        legal = _LEGAL.get(command.action)
        if legal is None:
            return ControlAck(False, self.snapshot(), f"unknown command {command.action!r}")
        if phase not in legal:
            return ControlAck(
                False, self.snapshot(), f"cannot {command.action} while {phase}"
            )
        if command.action == "manual_marker" and not (
            command.code and 1 <= command.code <= 255
        ):
            return ControlAck(False, self.snapshot(), "manual marker code must be in [1,255]")
        self._channel.push(command)
        return ControlAck(True, self.snapshot())

    def events(self) -> list[RecordedEvent]:
        with self._lock:
            return list(self._events)

    # -- runner internals ---------------------------------------------------

    def _active_now(self) -> float:
        assert self._t0 is not None
        anchor = self._pause_started if self._pause_started is not None else self.clock.now()
        return anchor - self._t0 - self._pause_accum

    def _set_phase(self, phase: str) -> None:
        with self._lock:
            self._phase = phase

    def _apply(self, command: Command) -> None:
        with self._lock:
            phase = self._phase
        if phase not in _LEGAL.get(command.action, ()):
            return  # stale command; state moved on since it was accepted
        if command.action == "pause":
            self._pause_started = self.clock.now()
            self._set_phase(PAUSED)
        elif command.action == "resume":
            assert self._pause_started is not None
            with self._lock:
                self._pause_accum += self.clock.now() - self._pause_started
                self._pause_started = None
                self._phase = RUNNING
        elif command.action == "abort":
            self._set_phase(ABORTED)
        elif command.action == "manual_marker":
            assert command.code is not None
            now = self._active_now()
            self._record_send(
                code=command.code, scheduled_ms=now, origin="manual", late=False
            )

    def _poll_commands(self) -> None:
        while True:
            command = self._channel.poll()
            if command is None and self._extra_control is not None:
                command = self._extra_control.poll()
            if command is None:
                return
            self._apply(command)

    def _record_send(self, code: int, scheduled_ms: float, origin: str, late: bool) -> bool:
        """Send one marker, stamp it, and append to the record. Returns False
        when delivery failed (the session must abort)."""
        actual = self._active_now()
        delivery = self._sender.send(code, ts_ms=actual, at_ms=actual)
        self.clock.charge_send()
        event = RecordedEvent(
            seq=delivery.frame.seq,
            scheduled_ms=scheduled_ms,
            actual_ms=actual,
            marker=code,
            origin=origin,
            late=late,
            label=self._current_label,
            block_index=self._current_block_index,
            block_duration_ms=self._current_duration,
        )
        with self._lock:
            self._events.append(event)
        if self._on_event is not None:
            self._on_event(event)
        if not delivery.ok:
            self._failure = delivery.error or "sink failure"
            self._set_phase(ABORTED)
            return False
        return True

    def _wait_until_active(self, deadline_active: float) -> bool:
        """Block until active time reaches the deadline, polling control.
        Returns False if the session was aborted while waiting."""
        while True:
            self._poll_commands()
            with self._lock:
                phase = self._phase
            if phase == ABORTED:
                return False
            if phase == PAUSED:
                self.clock.sleep_until(self.clock.now() + POLL_SLICE_MS)
                continue
            if self._active_now() >= deadline_active:
                return True
            assert self._t0 is not None
            wall_deadline = self._t0 + self._pause_accum + deadline_active
            self.clock.sleep_until(min(self.clock.now() + POLL_SLICE_MS, wall_deadline))

    def _wait_if_paused(self) -> bool:
        """Poll once and, if that surfaced a pause, hold until resume. Keeps
        block-boundary polls from dispatching into a paused session."""
        return self._wait_until_active(self._active_now())

    def _dispatch_protocol_event(self, code: int, scheduled_ms: float) -> bool:
        actual = self._active_now()
        late = actual > scheduled_ms + LATE_TOLERANCE_MS
        return self._record_send(code, scheduled_ms, origin="protocol", late=late)

    def run(self) -> ExecutionRecord:
        with self._lock:
            if self._phase == ABORTED:  # aborted before start
                aborted_early = True
            elif self._phase != PENDING:
                raise RuntimeError(f"session already ran (phase {self._phase})")
            else:
                aborted_early = False
                self._phase = RUNNING
                self._t0 = self.clock.now()
        if aborted_early:
            self._outcome = ABORTED
            return self._finish()
        codes = self.protocol.marker_map()
        completed = self._run_naive(codes) if self.strategy == NAIVE else self._run_deadline(codes)
        self._outcome = COMPLETED if completed else ABORTED
        self._set_phase(COMPLETED if completed else ABORTED)
        return self._finish()

    def _finish(self) -> ExecutionRecord:
        return ExecutionRecord(
            strategy=self.strategy,
            outcome=self._outcome or ABORTED,
            events=self.events(),
            failure=self._failure,
            protocol_name=self.protocol.name,
        )

    def _enter_block(self, index: int, label: str, duration_ms: float) -> None:
        with self._lock:
            self._current_block_index = index
        self._current_label = label
        self._current_duration = duration_ms

    def _run_naive(self, codes: dict[str, int]) -> bool:
        scheduled = 0.0
        for index, block in enumerate(self.protocol.blocks):
            self._enter_block(index, block.label, block.duration_ms)
            if not self._wait_if_paused():
                return False
            if not self._dispatch_protocol_event(codes[block.onset_marker], scheduled):
                return False
            # the block's wait is anchored to the send's completion: this is
            # where per-event cost leaks into the timeline
            block_end = self._active_now() + block.duration_ms
            if not self._wait_until_active(block_end):
                return False
            if block.offset_marker is not None:
                if not self._dispatch_protocol_event(
                    codes[block.offset_marker], scheduled + block.duration_ms
                ):
                    return False
            scheduled += block.duration_ms
        return True

    def _run_deadline(self, codes: dict[str, int]) -> bool:
        scheduled = 0.0
        for index, block in enumerate(self.protocol.blocks):
            # the wait for block k's onset still belongs to block k-1
            if not self._wait_until_active(scheduled):
                return False
            self._enter_block(index, block.label, block.duration_ms)
            if not self._dispatch_protocol_event(codes[block.onset_marker], scheduled):
                return False
            if block.offset_marker is not None:
                if not self._wait_until_active(scheduled + block.duration_ms):
                    return False
                if not self._dispatch_protocol_event(
                    codes[block.offset_marker], scheduled + block.duration_ms
                ):
                    return False
            scheduled += block.duration_ms
        # hold through the final block: the session ends when the schedule
        # does, not at the last marker
        return self._wait_until_active(scheduled)


def run_naive(
    protocol: Protocol,
    clock: Clock,
    sink: MarkerSink,
    control: ControlSource | None = None,
    on_event: Callable[[RecordedEvent], None] | None = None,
) -> ExecutionRecord:
    """Sequential-sleep execution: per-event cost accumulates as drift."""
    return Session(protocol, clock, sink, NAIVE, control, on_event).run()


def run_deadline(
    protocol: Protocol,
    clock: Clock,
    sink: MarkerSink,
    control: ControlSource | None = None,
    on_event: Callable[[RecordedEvent], None] | None = None,
) -> ExecutionRecord:
    """Absolute-deadline execution: drift-corrected; late events flagged."""
    return Session(protocol, clock, sink, DEADLINE, control, on_event).run()
