"""Simulated acquisition endpoint: receives frames, annotates a sample stream.

Stands in for the data-collection host: a single-sender TCP listener decodes
the framed marker stream, timestamps each frame at decode completion on its
own clock, and a pure annotation step lays the received markers onto a
synthetic sample series the way a discrete marker channel behaves in a
recording (nearest sample, earliest event wins a collision).
"""

from __future__ import annotations

import logging
import math
import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from .clocks import Clock, SystemClock
from .transport import MarkerFrame, StreamDecoder

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE_HZ = 2.0
WAVEFORM_SEED = 7


@dataclass(frozen=True)
class ReceivedEvent:
    frame: MarkerFrame
    recv_offset_ms: float  # receiver-clock offset from listener start


@dataclass
class CaptureResult:
    events: list[ReceivedEvent]
    corrupt_count: int
    status: str  # "completed" | "timeout" | "error"
    error: str | None = None


RECEIVER_LOG_HEADER = "recv_ms,code,seq"


def write_event_log(events: list[ReceivedEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECEIVER_LOG_HEADER + "\n")
        for ev in events:
            fh.write(f"{ev.recv_offset_ms:.3f},{ev.frame.code},{ev.frame.seq}\n")


class AcquisitionListener:
    """Accepts exactly one sender and collects its marker frames.

    The listening socket closes right after the first accept, enforcing the
    one-presentation-host-to-one-acquisition-host topology. The event log is
    append-only; snapshots are safe from any thread.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        accept_timeout_s: float = 10.0,
        read_timeout_s: float = 120.0,
        clock: Clock | None = None,
    ):
        self.host = host
        self.accept_timeout_s = accept_timeout_s
        self.read_timeout_s = read_timeout_s
        self._clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._events: list[ReceivedEvent] = []
        self._decoder = StreamDecoder()
        self._status: str | None = None
        self._error: str | None = None
        self._thread: threading.Thread | None = None
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(1)
        self.port = self._server.getsockname()[1]

    def start(self) -> "AcquisitionListener":
        self._thread = threading.Thread(target=self._serve, name="acq-listener", daemon=True)
        self._thread.start()
        return self

    def _serve(self) -> None:
        start_ms = self._clock.now()
        self._server.settimeout(self.accept_timeout_s)
        try:
            conn, _addr = self._server.accept()
        except socket.timeout:
            self._status = "timeout"
            self._server.close()
            return
        except OSError as exc:
            self._status, self._error = "error", str(exc)
            self._server.close()
            return
        self._server.close()  # single sender: refuse anyone else
        conn.settimeout(self.read_timeout_s)
        try:
            while True:
                try:
                    chunk = conn.recv(4096)
                except socket.timeout:
                    self._status, self._error = "error", "read timeout"
                    return
                if not chunk:
                    break
                for frame in self._decoder.feed(chunk):
                    event = ReceivedEvent(frame=frame, recv_offset_ms=self._clock.now() - start_ms)
                    with self._lock:
                        self._events.append(event)
            self._status = "completed"
        except OSError as exc:
            self._status, self._error = "error", str(exc)
        finally:
            conn.close()

    def events(self) -> list[ReceivedEvent]:
        with self._lock:
            return list(self._events)

    @property
    def corrupt_count(self) -> int:
        return self._decoder.corrupt_count

    def result(self, timeout_s: float | None = None) -> CaptureResult:
        assert self._thread is not None, "listener was never started"
        self._thread.join(timeout_s)
        status = self._status or ("error" if not self._thread.is_alive() else "running")
        return CaptureResult(
            events=self.events(),
            corrupt_count=self.corrupt_count,
            status=status,
            error=self._error,
        )


def listen(
    host: str = "127.0.0.1",
    port: int = 0,
    accept_timeout_s: float = 10.0,
    read_timeout_s: float = 120.0,
) -> AcquisitionListener:
    """Bind and start a listener; the bound port is on the returned object."""
    return AcquisitionListener(host, port, accept_timeout_s, read_timeout_s).start()


@dataclass
class AnnotatedSeries:
    """Synthetic sample stream with a marker channel (0 = no event)."""

    sample_rate_hz: float
    values: np.ndarray
    markers: np.ndarray
    conflicts: list[tuple[int, int, int]] = field(default_factory=list)  # (row, kept, dropped)

    def __len__(self) -> int:
        return len(self.values)

    def marker_rows(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.markers)[0]]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("index,value,marker\n")
            for i, (v, m) in enumerate(zip(self.values, self.markers)):
                fh.write(f"{i},{v:.6f},{int(m)}\n")


def _event_time_ms(event: ReceivedEvent, time_source: str) -> float:
    if time_source == "arrival":
        return event.recv_offset_ms
    if time_source == "sender":
        if event.frame.ts_ms is None:
            raise ValueError("frame carries no sender timestamp")
        return float(event.frame.ts_ms)
    # auto: sender-relative timestamps win when present; they survive any
    # clock skew between the two ends
    if event.frame.ts_ms is not None:
        return float(event.frame.ts_ms)
    return event.recv_offset_ms


def annotate(
    events: list[ReceivedEvent],
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    duration_ms: float = 0.0,
    seed: int = WAVEFORM_SEED,
    time_source: str = "auto",
) -> AnnotatedSeries:
    """Lay received markers onto a fixed-seed synthetic sample stream.

    Row count is ceil(duration * rate / 1000); an event at offset t lands on
    row round(t * rate / 1000) clamped into range, where t comes from
    ``time_source``: the frame's sender offset when present ("auto", the
    default), the receiver arrival clock ("arrival"), or strictly the sender
    offset ("sender"). Collisions keep the earliest event's code and are
    reported, never fatal.
    """
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    if time_source not in ("auto", "arrival", "sender"):
        raise ValueError(f"unknown time_source {time_source!r}")
    rows = max(int(math.ceil(duration_ms * sample_rate_hz / 1000.0)), 0)
    rng = np.random.default_rng(seed)
    values = np.cumsum(rng.normal(0.0, 0.05, rows)) + 1.0 if rows else np.zeros(0)
    markers = np.zeros(rows, dtype=np.int64)
    conflicts: list[tuple[int, int, int]] = []
    for event in events:
        if rows == 0:
            break
        t = _event_time_ms(event, time_source)
        row = int(t * sample_rate_hz / 1000.0 + 0.5)  # half-up
        row = min(max(row, 0), rows - 1)
        if markers[row] != 0:
            conflicts.append((row, int(markers[row]), event.frame.code))
            log.warning(
                "marker collision at row %d: keeping %d, dropping %d",
                row, int(markers[row]), event.frame.code,
            )
            continue
        markers[row] = event.frame.code
    return AnnotatedSeries(
        sample_rate_hz=sample_rate_hz, values=values, markers=markers, conflicts=conflicts
    )
