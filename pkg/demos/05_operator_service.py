"""Drive the operator control service programmatically.

The service is the backend for the browser console: list protocols, start a
session, follow the live event stream, steer it, and pull the final timing
report. This script does the whole loop over plain HTTP against an ephemeral
port; it is the same traffic the operator UI generates.
"""

import json
import tempfile
import time
import urllib.request
from http.client import HTTPConnection
from pathlib import Path

from markline import ControlService, ServiceConfig

protocol_dir = Path(tempfile.mkdtemp(prefix="markline-protocols-"))
(protocol_dir / "live.proto").write_text(
    "protocol live\n"
    "marker REST=1\n"
    "marker QUIZ=2\n"
    "block rest REST 600ms\n"
    "block quiz QUIZ 900ms\n"
    "block rest REST 600ms\n"
)

service = ControlService(ServiceConfig(port=0, protocol_dir=str(protocol_dir)))
service.start()
base = f"http://127.0.0.1:{service.port}"
print(f"service up at {base}/v1")


def get(path):
    with urllib.request.urlopen(base + path, timeout=10) as resp:
        return json.loads(resp.read())


def post(path, body):
    request = urllib.request.Request(
        base + path, data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(request, timeout=10) as resp:
        return json.loads(resp.read())


print("protocols:", [p["name"] for p in get("/v1/protocols") if p.get("valid")])

descriptor = post("/v1/sessions", {"protocol": "live", "strategy": "deadline"})
session_id = descriptor["id"]
print(f"session {session_id} created, phase {descriptor['phase']}")

# Inject a manual marker while the session runs, the way an operator would
# tag an unexpected observation.
time.sleep(0.7)
ack = post(f"/v1/sessions/{session_id}/control", {"action": "manual_marker", "code": 9})
print("manual marker accepted:", ack["accepted"])

# Follow the server-sent event stream to its end.
conn = HTTPConnection("127.0.0.1", service.port, timeout=30)
conn.request("GET", f"/v1/sessions/{session_id}/events?since=-1")
resp = conn.getresponse()
print("\nlive stream:")
current = {}
while True:
    line = resp.readline().decode().rstrip("\n")
    if line.startswith(":"):
        continue
    if line:
        key, _, value = line.partition(": ")
        current[key] = value
        continue
    if not current:
        continue
    kind, data = current.get("event"), json.loads(current.get("data", "{}"))
    current = {}
    if kind == "marker":
        print(f"  seq {data['seq']}  {data['origin']:<8s} code {data['marker']}"
              f"  at {data['actual_ms']:.1f} ms  block {data['label']}")
    elif kind == "end":
        print(f"  -- {data['outcome']} --")
        break
conn.close()

report = get(f"/v1/sessions/{session_id}/report")
print(f"\nreport: {report['verdict']} at tol {report['tol_ms']} ms, "
      f"max |jitter| {report['max_abs_jitter_ms']:.2f} ms, "
      f"{len(report['per_event'])} protocol events, "
      f"late {report['late_count']}")

service.stop()
print("service stopped")
