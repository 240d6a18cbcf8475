"""Monotonic clocks for session execution.

All instants are milliseconds as floats on a monotonic axis (never wall
clock, so host time adjustments cannot bend a session). Resolution contract
is 1 ms; anything below that is under the measurement floor.
"""

from __future__ import annotations

import time


class Clock:
    """Timing primitive used by the scheduler."""

    def now(self) -> float:
        raise NotImplementedError

    def sleep_until(self, instant_ms: float) -> None:
        raise NotImplementedError

    def charge_send(self) -> None:
        """Account for the cost of one marker send. Real clocks pay it in
        real time; test clocks advance explicitly."""


class SystemClock(Clock):
    """time.monotonic-backed clock, origin at construction."""

    def __init__(self):
        self._origin_ns = time.monotonic_ns()

    def now(self) -> float:
        return (time.monotonic_ns() - self._origin_ns) / 1e6

    def sleep_until(self, instant_ms: float) -> None:
        remaining = instant_ms - self.now()
        if remaining > 0:
            time.sleep(remaining / 1000.0)


class FakeClock(Clock):
    """Deterministic clock for simulated runs.

    ``per_event_overhead_ms`` is added to the current instant on every marker
    send, modeling per-event processing cost. Stalls scheduled with
    :meth:`stall_at` fire while sleeping across their trigger instant,
    modeling a host hiccup.
    """

    def __init__(self, per_event_overhead_ms: float = 0.0, start_ms: float = 0.0):
        self.current = float(start_ms)
        self.per_event_overhead_ms = float(per_event_overhead_ms)
        self._stalls: list[tuple[float, float]] = []

    def now(self) -> float:
        return self.current

    def sleep_until(self, instant_ms: float) -> None:
        target = max(self.current, instant_ms)
        for at, extra in list(self._stalls):
            if self.current < at <= target:
                target = max(target, at + extra)
                self._stalls.remove((at, extra))
        self.current = target

    def charge_send(self) -> None:
        self.current += self.per_event_overhead_ms

    def advance(self, delta_ms: float) -> None:
        self.current += delta_ms

    def stall_at(self, at_ms: float, duration_ms: float) -> None:
        """Schedule a one-shot stall: sleeping across ``at_ms`` wakes no
        earlier than ``at_ms + duration_ms``."""
        self._stalls.append((float(at_ms), float(duration_ms)))
