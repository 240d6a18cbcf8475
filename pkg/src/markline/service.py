"""Local operator control service.

Loopback-only by default: the operator console and the session runner share
one host. Control plane is JSON over HTTP; the marker data plane stays
binary-framed and never passes through here. Live events stream out over
server-sent events from an append-only log, so a slow consumer can never
stall the scheduler, and a reconnecting consumer resumes from the last
sequence number it saw.

Endpoints (stable):
    GET  /v1/protocols
    POST /v1/sessions
    GET  /v1/sessions/{id}
    POST /v1/sessions/{id}/control
    GET  /v1/sessions/{id}/events     (SSE; ?since=SEQ resumes)
    GET  /v1/sessions/{id}/report
"""

from __future__ import annotations

import json
import os
import re
import threading
import uuid
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import report as report_mod
from .clocks import FakeClock, SystemClock
from .protocol import Protocol, expected_timeline
from .scheduling import (
    DEADLINE,
    PAUSED,
    PENDING,
    RUNNING,
    STRATEGIES,
    Command,
    ExecutionRecord,
    RecordedEvent,
    Session,
)
from .transport import SinkError

PORT_ENV_VAR = "MARKLINE_PORT"
PROTOCOL_SUFFIX = ".proto"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 7070
    protocol_dir: str = "protocols"
    default_strategy: str = DEADLINE
    default_tol_ms: float = 50.0
    ui_dir: str | None = None
    acq_host: str = "127.0.0.1"
    acq_port: int = 7788
    acq_sample_rate_hz: float = 2.0

    @classmethod
    def load(cls, config_path: str | None = None, **overrides) -> "ServiceConfig":
        """Key = value file, then MARKLINE_PORT, then explicit flag overrides."""
        config = cls()
        if config_path:
            for lineno, raw in enumerate(open(config_path, "r", encoding="utf-8"), 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{config_path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if not hasattr(config, key):
                    raise ValueError(f"{config_path}:{lineno}: unknown key {key!r}")
                current = getattr(config, key)
                if isinstance(current, int) and not isinstance(current, bool):
                    value = int(value)
                elif isinstance(current, float):
                    value = float(value)
                setattr(config, key, value)
        if os.environ.get(PORT_ENV_VAR):
            config.port = int(os.environ[PORT_ENV_VAR])
        for key, value in overrides.items():
            if value is not None:
                setattr(config, key, value)
        if config.default_strategy not in STRATEGIES:
            raise ValueError(f"unknown default strategy {config.default_strategy!r}")
        if not os.path.isdir(config.protocol_dir):
            raise ValueError(f"protocol directory {config.protocol_dir!r} does not exist")
        return config


def _marker_payload(event: RecordedEvent) -> dict:
    return {
        "type": "marker",
        "seq": event.seq,
        "scheduled_ms": event.scheduled_ms,
        "actual_ms": event.actual_ms,
        "marker": event.marker,
        "origin": event.origin,
        "late": event.late,
        "label": event.label,
        "block_index": event.block_index,
        "block_duration_ms": event.block_duration_ms,
    }


class EventLog:
    """Append-only marker log with blocking followers and a terminal entry."""

    def __init__(self):
        self._cond = threading.Condition()
        self._markers: list[dict] = []
        self._terminal: dict | None = None

    def append(self, event: RecordedEvent) -> None:
        with self._cond:
            self._markers.append(_marker_payload(event))
            self._cond.notify_all()

    def finish(self, payload: dict) -> None:
        with self._cond:
            self._terminal = payload
            self._cond.notify_all()

    def snapshot(self) -> tuple[list[dict], dict | None]:
        with self._cond:
            return list(self._markers), self._terminal

    def follow(self, since_seq: int, stopped: threading.Event, ping_s: float = 1.0):
        """Yield ("marker", payload) after since_seq, then ("end", payload).
        Yields ("ping", None) while idle so the transport can keep alive.
        Never yields while holding the lock: a slow consumer must not be able
        to stall the session thread's appends."""
        index = 0
        while not stopped.is_set():
            with self._cond:
                if index >= len(self._markers) and self._terminal is None:
                    self._cond.wait(timeout=ping_s)
                pending = self._markers[index:]
                index = len(self._markers)
                terminal = self._terminal
            sent = 0
            for payload in pending:
                if payload["seq"] > since_seq:
                    sent += 1
                    yield "marker", payload
            if terminal is not None:
                yield "end", terminal
                return
            if not sent:
                yield "ping", None


class SessionRuntime:
    """A session plus everything the service needs to describe and stream it."""

    def __init__(
        self,
        session_id: str,
        protocol: Protocol,
        session: Session,
        log: EventLog,
        strategy: str,
        tol_ms: float,
        sink_specs: list[str],
        close_sink,
    ):
        self.id = session_id
        self.protocol = protocol
        self.session = session
        self.strategy = strategy
        self.tol_ms = tol_ms
        self.sink_specs = sink_specs
        self.log = log
        self.record: ExecutionRecord | None = None
        self._close_sink = close_sink
        self._thread = threading.Thread(target=self._run, name=f"session-{session_id}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        failure = None
        try:
            self.record = self.session.run()
        except Exception as exc:  # a runner bug must never hang stream consumers
            failure = str(exc)
        finally:
            try:
                self._close_sink()
            except Exception:
                pass
            payload = {"type": "end", "outcome": self.record.outcome if self.record else "aborted"}
            if failure:
                payload["error"] = failure
            self.log.finish(payload)

    def active(self) -> bool:
        return self.session.snapshot().phase in (PENDING, RUNNING, PAUSED)

    def descriptor(self) -> dict:
        snap = self.session.snapshot()
        markers, terminal = self.log.snapshot()
        return {
            "id": self.id,
            "protocol": self.protocol.name,
            "strategy": self.strategy,
            "tol_ms": self.tol_ms,
            "sinks": self.sink_specs,
            "phase": snap.phase,
            "current_block_index": snap.current_block_index,
            "pause_accumulated_ms": snap.pause_accumulated_ms,
            "events_recorded": snap.events_recorded,
            "outcome": snap.outcome,
            "event_count": self.protocol.event_count,
            "total_duration_ms": self.protocol.total_duration_ms,
            "block_labels": [b.label for b in self.protocol.blocks],
            "terminal": terminal is not None,
            "last_events": markers[-5:],
        }

    def report_json(self) -> dict | None:
        if self.record is None:
            return None
        timeline = expected_timeline(self.protocol)
        timing = report_mod.compare(timeline, self.record, tol_ms=self.tol_ms)
        expected_curve = report_mod.cumulative_curve(timeline)
        actual_curve = (
            report_mod.cumulative_curve(self.record) if self.record.protocol_events() else None
        )
        return {
            "session": self.id,
            "outcome": self.record.outcome,
            "failure": self.record.failure,
            "verdict": timing.verdict,
            "detail": timing.detail,
            "tol_ms": timing.tol_ms,
            "max_abs_jitter_ms": timing.max_abs_jitter_ms,
            "mean_abs_jitter_ms": timing.mean_abs_jitter_ms,
            "end_drift_ms": timing.end_drift_ms,
            "late_count": timing.late_count,
            "per_event": [
                {
                    "seq": p.seq,
                    "expected_ms": p.expected_ms,
                    "actual_ms": p.actual_ms,
                    "error_ms": p.error_ms,
                }
                for p in timing.per_event
            ],
            "curve_expected": [list(point) for point in expected_curve.points],
            "curve_actual": [list(point) for point in actual_curve.points] if actual_curve else [],
        }


class ConflictError(Exception):
    pass


class NotFoundError(Exception):
    pass


class ControlService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self._lock = threading.Lock()
        self._runtimes: dict[str, SessionRuntime] = {}
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self.port = config.port

    # -- protocol catalog -----------------------------------------------------

    def list_protocols(self) -> list[dict]:
        from .cli import load_protocol  # late import to avoid a cycle

        entries = []
        for filename in sorted(os.listdir(self.config.protocol_dir)):
            if not filename.endswith(PROTOCOL_SUFFIX):
                continue
            path = os.path.join(self.config.protocol_dir, filename)
            protocol, problems = load_protocol(path)
            if protocol is None:
                entries.append({"file": filename, "valid": False, "problems": problems})
            else:
                entries.append(
                    {
                        "file": filename,
                        "valid": True,
                        "name": protocol.name,
                        "blocks": len(protocol.blocks),
                        "event_count": protocol.event_count,
                        "total_duration_ms": protocol.total_duration_ms,
                        "block_labels": [b.label for b in protocol.blocks],
                    }
                )
        return entries

    def _find_protocol(self, name: str) -> Protocol | None:
        from .cli import load_protocol

        for filename in sorted(os.listdir(self.config.protocol_dir)):
            if not filename.endswith(PROTOCOL_SUFFIX):
                continue
            path = os.path.join(self.config.protocol_dir, filename)
            protocol, _problems = load_protocol(path)
            if protocol is not None and (protocol.name == name or filename[: -len(PROTOCOL_SUFFIX)] == name):
                return protocol
        return None

    # -- session lifecycle ----------------------------------------------------

    def create_session(self, body: dict) -> dict:
        from .cli import build_sinks

        name = body.get("protocol")
        if not name:
            raise ValueError("body needs a 'protocol' name")
        protocol = self._find_protocol(str(name))
        if protocol is None:
            raise NotFoundError(f"unknown protocol {name!r}")
        strategy = body.get("strategy", self.config.default_strategy)
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        tol_ms = float(body.get("tol_ms", self.config.default_tol_ms))
        sink_specs = [
            # bare "loopback" points at the configured acquisition endpoint
            f"loopback:{self.config.acq_host}:{self.config.acq_port}" if spec == "loopback" else spec
            for spec in body.get("sinks", [])
        ]
        with self._lock:
            for runtime in self._runtimes.values():
                if runtime.active():
                    raise ConflictError(f"session {runtime.id} is {runtime.session.snapshot().phase}")
            sink = build_sinks(sink_specs, protocol)
            if body.get("fake_clock"):
                clock = FakeClock(per_event_overhead_ms=float(body.get("overhead_ms", 0.0)))
            else:
                clock = SystemClock()
            session_id = uuid.uuid4().hex[:12]
            log = EventLog()
            session = Session(protocol, clock, sink, strategy=strategy, on_event=log.append)
            runtime = SessionRuntime(
                session_id,
                protocol,
                session,
                log,
                strategy,
                tol_ms,
                sink_specs,
                close_sink=sink.close,
            )
            self._runtimes[session_id] = runtime
            runtime.start()
        return runtime.descriptor()

    def get_runtime(self, session_id: str) -> SessionRuntime:
        runtime = self._runtimes.get(session_id)
        if runtime is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return runtime

    def control(self, session_id: str, body: dict) -> dict:
        runtime = self.get_runtime(session_id)
        action = body.get("action")
        if action not in ("pause", "resume", "abort", "manual_marker"):
            raise ValueError(f"unknown action {action!r}")
        code = body.get("code")
        ack = runtime.session.control(Command(action, None if code is None else int(code)))
        return {
            "accepted": ack.accepted,
            "reason": ack.reason,
            "state": asdict(ack.state),
        }

    # -- http plumbing ----------------------------------------------------------

    def start(self) -> None:
        service = self

        class Handler(_ServiceHandler):
            pass

        Handler.service = service
        self._server = ThreadingHTTPServer((self.config.host, self.config.port), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, name="markline-http", daemon=True)
        self._thread.start()

    def wait(self) -> None:
        if self._thread is not None:
            while self._thread.is_alive():
                self._thread.join(timeout=0.5)

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()


_SESSION_ROUTE = re.compile(r"^/v1/sessions/([0-9a-f]+)(?:/(events|control|report))?$")

_UI_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
}


class _ServiceHandler(BaseHTTPRequestHandler):
    service: ControlService
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- helpers --

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        data = self.rfile.read(length)
        parsed = json.loads(data.decode("utf-8"))
        if not isinstance(parsed, dict):
            raise ValueError("body must be a JSON object")
        return parsed

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    # -- routing --

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/v1/protocols":
            self._send_json(200, self.service.list_protocols())
            return
        match = _SESSION_ROUTE.match(url.path)
        if match:
            session_id, tail = match.group(1), match.group(2)
            try:
                runtime = self.service.get_runtime(session_id)
            except NotFoundError as exc:
                self._send_json(404, {"error": str(exc)})
                return
            if tail is None:
                self._send_json(200, runtime.descriptor())
            elif tail == "events":
                try:
                    since = int(parse_qs(url.query).get("since", ["-1"])[0])
                except ValueError:
                    self._send_json(400, {"error": "since must be an integer"})
                    return
                self._stream_events(runtime, since)
            elif tail == "report":
                payload = runtime.report_json()
                if payload is None:
                    self._send_json(409, {"error": "session is not terminal yet"})
                else:
                    self._send_json(200, payload)
            return
        if url.path == "/" or url.path.startswith("/ui"):
            self._serve_ui(url.path)
            return
        self._send_json(404, {"error": f"no route {url.path}"})

    def do_POST(self):
        url = urlparse(self.path)
        try:
            body = self._read_body()
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": f"bad request body: {exc}"})
            return
        if url.path == "/v1/sessions":
            try:
                descriptor = self.service.create_session(body)
                self._send_json(201, descriptor)
            except ConflictError as exc:
                self._send_json(409, {"error": str(exc)})
            except NotFoundError as exc:
                self._send_json(404, {"error": str(exc)})
            except (ValueError, SinkError) as exc:
                self._send_json(400, {"error": str(exc)})
            return
        match = _SESSION_ROUTE.match(url.path)
        if match and match.group(2) == "control":
            try:
                ack = self.service.control(match.group(1), body)
            except NotFoundError as exc:
                self._send_json(404, {"error": str(exc)})
                return
            except ValueError as exc:
                self._send_json(400, {"error": str(exc)})
                return
            self._send_json(200 if ack["accepted"] else 409, ack)
            return
        self._send_json(404, {"error": f"no route {url.path}"})

    # -- SSE --

    def _stream_events(self, runtime: SessionRuntime, since: int) -> None:
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Connection", "close")
        self.end_headers()
        stopped = threading.Event()

        def emit(kind: str, payload) -> None:
            if kind == "ping":
                self.wfile.write(b": ping\n\n")
            else:
                chunk = f"event: {kind}\n"
                if kind == "marker":
                    chunk += f"id: {payload['seq']}\n"
                chunk += f"data: {json.dumps(payload)}\n\n"
                self.wfile.write(chunk.encode("utf-8"))
            self.wfile.flush()

        try:
            emit("hello", runtime.descriptor())
            for kind, payload in runtime.log.follow(since, stopped):
                emit(kind, payload)
        except (BrokenPipeError, ConnectionResetError):
            stopped.set()

    # -- static UI --

    def _serve_ui(self, path: str) -> None:
        ui_dir = self.service.config.ui_dir
        if not ui_dir or not os.path.isdir(ui_dir):
            self._send_json(404, {"error": "no UI bundle configured (set ui_dir)"})
            return
        rel = path[len("/ui"):].lstrip("/") if path.startswith("/ui") else ""
        rel = rel or "index.html"
        full = os.path.realpath(os.path.join(ui_dir, rel))
        if not full.startswith(os.path.realpath(ui_dir)) or not os.path.isfile(full):
            self._send_json(404, {"error": f"no UI file {rel!r}"})
            return
        ext = os.path.splitext(full)[1]
        with open(full, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", _UI_CONTENT_TYPES.get(ext, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
