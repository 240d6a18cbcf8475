"""The timing story: why sequential sleeps drift and absolute deadlines don't.

Under a simulated clock that charges 5 ms per marker send, the
sequential-sleep strategy accumulates that cost into every later event: after
n events it is (n-1) * 5 ms behind. The deadline strategy pins each event to
an absolute offset from session start, so the same cost never accumulates.
Both runs produce identical marker sequences; only the realized instants
differ, which is exactly what the cumulative curves show.
"""

from markline import FakeClock, NullSink, compare, cumulative_curve, expected_timeline
from markline import run_deadline, run_naive
from markline.protocol import expand, parse_protocol

SOURCE = "protocol ten\nmarker TICK=1\nrepeat 10 { block tick TICK 100ms }\n"
OVERHEAD_MS = 5

protocol = expand(parse_protocol(SOURCE).spec)
timeline = expected_timeline(protocol)

naive = run_naive(protocol, FakeClock(per_event_overhead_ms=OVERHEAD_MS), NullSink())
deadline = run_deadline(protocol, FakeClock(per_event_overhead_ms=OVERHEAD_MS), NullSink())

print(f"{OVERHEAD_MS} ms per-event cost, {protocol.event_count} events\n")
print("event   scheduled   naive actual   drift   deadline actual   drift")
for k, expected in enumerate(timeline.events):
    n_event = naive.events[k]
    d_event = deadline.events[k]
    print(
        f"  {k:2d}    {expected.offset_ms:>7d}    {n_event.actual_ms:>9.0f}"
        f"    {n_event.drift_ms:>5.0f}   {d_event.actual_ms:>12.0f}    {d_event.drift_ms:>5.0f}"
    )

print(f"\nnaive end drift:    {naive.end_drift_ms:.0f} ms  (= (n-1) * overhead)")
print(f"deadline end drift: {deadline.end_drift_ms:.0f} ms")

# The verdict machinery quantifies the same thing.
print("\nagainst a 50 ms tolerance:",
      compare(timeline, naive, tol_ms=50).verdict, "(naive)")
print("against a 10 ms tolerance:",
      compare(timeline, naive, tol_ms=10).verdict, "(naive)")
print("against a  0 ms tolerance:",
      compare(timeline, deadline, tol_ms=0).verdict, "(deadline)")

# Cumulative curves are the plot-ready form of the comparison: index vs time.
naive_curve = cumulative_curve(naive)
print("\ncumulative curve of the naive run (k, ms):")
print("  " + "  ".join(f"({k},{ms:.0f})" for k, ms in naive_curve.points))
