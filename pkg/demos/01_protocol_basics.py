"""Protocol basics: parse the block DSL, expand repeats, derive the schedule.

A protocol is a marker vocabulary plus timed blocks. Everything downstream
(scheduling, transport, verification) consumes the expanded form, so this is
the natural place to start.
"""

from markline import expand, expected_timeline, parse_protocol, serialize_protocol

SOURCE = """\
protocol learning_session
marker REST=1
marker CONCEPT=2
marker QUIZ=3
marker FEEDBACK=4

block rest REST 20s
repeat 2 {
  block concept CONCEPT 45s
  block quiz QUIZ 30s
  block feedback FEEDBACK 10s
  block rest REST 20s
}
"""

result = parse_protocol(SOURCE)
if not result.ok:
    for diagnostic in result.diagnostics:
        print("diagnostic:", diagnostic)
    raise SystemExit(2)

protocol = expand(result.spec)
print(f"protocol {protocol.name!r}: {len(protocol.blocks)} blocks, "
      f"{protocol.event_count} marker events, {protocol.total_duration_ms / 1000:.0f} s total\n")

print("expanded block order:")
for i, block in enumerate(protocol.blocks):
    print(f"  {i:2d}  {block.label:<10s} kind={block.kind:<9s} {block.duration_ms:>6d} ms")

print("\nexpected timeline (offset -> marker):")
for event in expected_timeline(protocol).events:
    tag = "offset" if event.is_offset else "onset"
    print(f"  {event.offset_ms:>7d} ms  code {event.marker:3d}  {event.label} ({tag})")

# The canonical text form round-trips: parse(serialize(s)) == s.
canonical = serialize_protocol(result.spec)
assert parse_protocol(canonical).spec == result.spec
print("\ncanonical form round-trips; serialized text:\n")
print(canonical)
