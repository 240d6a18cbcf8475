from __future__ import annotations

import http.client
import json
import time
import urllib.error
import urllib.request

import pytest

from markline.service import ControlService, ServiceConfig

FAST_SRC = (
    "protocol fast\n"
    "marker REST=1\n"
    "marker QUIZ=2\n"
    "block rest REST 200ms\n"
    "block quiz QUIZ 300ms\n"
    "block rest REST 200ms\n"
)
SLOW_SRC = "protocol slow\nmarker T=1\nrepeat 20 { block tick T 200ms }\n"


@pytest.fixture
def service(tmp_path):
    protocol_dir = tmp_path / "protocols"
    protocol_dir.mkdir()
    (protocol_dir / "fast.proto").write_text(FAST_SRC)
    (protocol_dir / "slow.proto").write_text(SLOW_SRC)
    config = ServiceConfig(host="127.0.0.1", port=0, protocol_dir=str(protocol_dir))
    svc = ControlService(config)
    svc.start()
    yield svc
    svc.stop()


def get_json(port: int, path: str):
    with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}", timeout=10) as resp:
        return resp.status, json.loads(resp.read().decode())


def post_json(port: int, path: str, body: dict):
    request = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}",
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=10) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode())


def read_sse(port: int, path: str, timeout: float = 30.0):
    """Collect SSE events until the stream's end event (or EOF)."""
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=timeout)
    conn.request("GET", path)
    resp = conn.getresponse()
    assert resp.status == 200
    events = []
    current: dict = {}
    while True:
        raw = resp.readline()
        if not raw:
            break
        line = raw.decode().rstrip("\n")
        if line.startswith(":"):
            continue
        if line == "":
            if current:
                events.append(current)
                if current.get("event") == "end":
                    break
                current = {}
            continue
        key, _, value = line.partition(": ")
        current[key] = json.loads(value) if key == "data" else value
    conn.close()
    return events


def wait_terminal(port: int, session_id: str, timeout_s: float = 15.0) -> dict:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        _status, descriptor = get_json(port, f"/v1/sessions/{session_id}")
        if descriptor["phase"] in ("completed", "aborted"):
            return descriptor
        time.sleep(0.05)
    raise AssertionError("session never reached a terminal phase")


class TestCatalog:
    def test_list_protocols(self, service):
        status, entries = get_json(service.port, "/v1/protocols")
        assert status == 200
        by_name = {e.get("name"): e for e in entries if e.get("valid")}
        assert by_name["fast"]["blocks"] == 3
        assert by_name["fast"]["event_count"] == 3
        assert by_name["fast"]["total_duration_ms"] == 700
        assert by_name["slow"]["blocks"] == 20

    def test_unknown_route(self, service):
        with pytest.raises(urllib.error.HTTPError) as excinfo:
            urllib.request.urlopen(f"http://127.0.0.1:{service.port}/v2/nope", timeout=5)
        assert excinfo.value.code == 404


class TestSessions:
    def test_create_run_and_stream(self, service):
        status, descriptor = post_json(
            service.port, "/v1/sessions", {"protocol": "fast", "fake_clock": True}
        )
        assert status == 201
        session_id = descriptor["id"]
        wait_terminal(service.port, session_id)
        events = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=-1")
        kinds = [e["event"] for e in events]
        assert kinds[0] == "hello"
        assert kinds[1:] == ["marker", "marker", "marker", "end"]
        assert events[-1]["data"]["outcome"] == "completed"
        markers = [e["data"]["marker"] for e in events if e["event"] == "marker"]
        assert markers == [1, 2, 1]
        assert [e["data"]["seq"] for e in events if e["event"] == "marker"] == [0, 1, 2]

    def test_stream_resume_from_last_seen_seq(self, service):
        _status, descriptor = post_json(
            service.port, "/v1/sessions", {"protocol": "fast", "fake_clock": True}
        )
        session_id = descriptor["id"]
        wait_terminal(service.port, session_id)
        events = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=0")
        seqs = [e["data"]["seq"] for e in events if e["event"] == "marker"]
        assert seqs == [1, 2]  # replay strictly after the seen sequence

    def test_unknown_protocol_404(self, service):
        status, body = post_json(service.port, "/v1/sessions", {"protocol": "nope"})
        assert status == 404 and "unknown protocol" in body["error"]

    def test_unknown_session_404(self, service):
        status, body = get_json_or_error(service.port, "/v1/sessions/deadbeef")
        assert status == 404

    def test_second_concurrent_session_rejected(self, service):
        status, descriptor = post_json(service.port, "/v1/sessions", {"protocol": "slow"})
        assert status == 201
        try:
            status2, body = post_json(service.port, "/v1/sessions", {"protocol": "fast"})
            assert status2 == 409
            assert "is running" in body["error"] or "is pending" in body["error"]
        finally:
            post_json(
                service.port,
                f"/v1/sessions/{descriptor['id']}/control",
                {"action": "abort"},
            )
            wait_terminal(service.port, descriptor["id"])

    def test_sink_failure_is_bad_request(self, service):
        status, body = post_json(
            service.port,
            "/v1/sessions",
            {"protocol": "fast", "sinks": ["loopback:127.0.0.1:1"]},
        )
        assert status == 400
        assert "connect" in body["error"]


class TestControl:
    def test_abort_ends_stream_with_aborted(self, service):
        _status, descriptor = post_json(service.port, "/v1/sessions", {"protocol": "slow"})
        session_id = descriptor["id"]
        time.sleep(0.3)
        status, ack = post_json(
            service.port, f"/v1/sessions/{session_id}/control", {"action": "abort"}
        )
        assert status == 200 and ack["accepted"]
        events = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=-1")
        assert events[-1]["event"] == "end"
        assert events[-1]["data"]["outcome"] == "aborted"

    def test_pause_resume_and_manual_marker(self, service):
        _status, descriptor = post_json(service.port, "/v1/sessions", {"protocol": "slow"})
        session_id = descriptor["id"]
        time.sleep(0.25)
        status, ack = post_json(
            service.port, f"/v1/sessions/{session_id}/control", {"action": "pause"}
        )
        assert status == 200 and ack["accepted"]
        time.sleep(0.2)
        status, ack = post_json(
            service.port,
            f"/v1/sessions/{session_id}/control",
            {"action": "manual_marker", "code": 9},
        )
        assert status == 200, ack
        status, ack = post_json(
            service.port, f"/v1/sessions/{session_id}/control", {"action": "resume"}
        )
        assert status == 200 and ack["accepted"]
        post_json(service.port, f"/v1/sessions/{session_id}/control", {"action": "abort"})
        descriptor = wait_terminal(service.port, session_id)
        assert descriptor["pause_accumulated_ms"] > 0
        events = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=-1")
        origins = [e["data"]["origin"] for e in events if e["event"] == "marker"]
        assert "manual" in origins

    def test_illegal_transition_is_conflict(self, service):
        _status, descriptor = post_json(service.port, "/v1/sessions", {"protocol": "slow"})
        session_id = descriptor["id"]
        time.sleep(0.2)
        status, ack = post_json(
            service.port, f"/v1/sessions/{session_id}/control", {"action": "resume"}
        )
        assert status == 409 and not ack["accepted"]
        assert ack["state"]["phase"] == "running"
        post_json(service.port, f"/v1/sessions/{session_id}/control", {"action": "abort"})
        wait_terminal(service.port, session_id)

    def test_unknown_action_is_bad_request(self, service):
        _status, descriptor = post_json(
            service.port, "/v1/sessions", {"protocol": "fast", "fake_clock": True}
        )
        status, _body = post_json(
            service.port, f"/v1/sessions/{descriptor['id']}/control", {"action": "explode"}
        )
        assert status == 400


class TestReport:
    def test_report_not_ready_while_running(self, service):
        _status, descriptor = post_json(service.port, "/v1/sessions", {"protocol": "slow"})
        session_id = descriptor["id"]
        status, _body = get_json_or_error(service.port, f"/v1/sessions/{session_id}/report")
        assert status == 409
        post_json(service.port, f"/v1/sessions/{session_id}/control", {"action": "abort"})
        wait_terminal(service.port, session_id)

    def test_report_after_completion(self, service):
        _status, descriptor = post_json(
            service.port, "/v1/sessions", {"protocol": "fast", "fake_clock": True}
        )
        session_id = descriptor["id"]
        wait_terminal(service.port, session_id)
        status, report = get_json_or_error(service.port, f"/v1/sessions/{session_id}/report")
        assert status == 200
        assert report["verdict"] == "equivalent"
        assert report["max_abs_jitter_ms"] == 0
        assert len(report["per_event"]) == 3
        assert report["curve_expected"] == report["curve_actual"]

    def test_stream_replay_equals_record(self, service):
        _status, descriptor = post_json(
            service.port, "/v1/sessions", {"protocol": "fast", "fake_clock": True}
        )
        session_id = descriptor["id"]
        wait_terminal(service.port, session_id)
        first = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=-1")
        second = read_sse(service.port, f"/v1/sessions/{session_id}/events?since=-1")
        marker_payloads = lambda evs: [e["data"] for e in evs if e["event"] == "marker"]
        assert marker_payloads(first) == marker_payloads(second)
        _status, report = get_json_or_error(service.port, f"/v1/sessions/{session_id}/report")
        assert [m["actual_ms"] for m in marker_payloads(first)] == [
            p["actual_ms"] for p in report["per_event"]
        ]


def get_json_or_error(port: int, path: str):
    try:
        return get_json(port, path)
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode())
