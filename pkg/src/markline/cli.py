"""Command-line surface.

Exit codes are a fixed public contract:

    0  ok / timelines equivalent
    2  validation failure (protocol or arguments)
    3  timelines divergent
    4  session aborted (operator, signal, or listener timeout)
    5  sink or setup failure before any marker was sent
"""

from __future__ import annotations

import argparse
import os
import signal
import sys

from . import acquisition, report, scheduling
from .clocks import FakeClock, SystemClock
from .protocol import Protocol, ProtocolError, expand, expected_timeline, parse_protocol
from .scheduling import Session, abort
from .service import ControlService, ServiceConfig
from .transport import (
    FanOutSink,
    FileSink,
    KeyEventSink,
    LoopbackNetworkSink,
    MarkerSink,
    NullSink,
    SinkError,
    key_mapping_for,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENT = 3
EXIT_ABORTED = 4
EXIT_SETUP = 5


def load_protocol(path: str) -> tuple[Protocol | None, list[str]]:
    """Parse, validate, and expand a protocol file. Returns (protocol, problems)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        return None, [f"cannot read {path}: {exc}"]
    result = parse_protocol(text)
    if not result.ok:
        return None, [f"{path}:{d}" for d in result.diagnostics]
    assert result.spec is not None
    try:
        return expand(result.spec), []
    except ProtocolError as exc:
        return None, [str(exc)]


def build_sink(spec: str) -> MarkerSink:
    """Sink specs: null | file:PATH | loopback:HOST:PORT | loopback:PORT | keys."""
    kind, _, rest = spec.partition(":")
    if kind == "null":
        return NullSink()
    if kind == "file":
        if not rest:
            raise SinkError("file sink needs a path (file:PATH)")
        return FileSink(rest)
    if kind == "loopback":
        host, _, port = rest.rpartition(":")
        host = host or "127.0.0.1"
        try:
            return LoopbackNetworkSink(host, int(port))
        except ValueError:
            raise SinkError(f"bad loopback spec {spec!r} (loopback:HOST:PORT)") from None
    if kind == "keys":
        raise SinkError("key sink needs protocol context; use build_sinks")
    raise SinkError(f"unknown sink spec {spec!r}")


def build_sinks(specs: list[str], protocol: Protocol) -> MarkerSink:
    sinks: list[MarkerSink] = []
    for spec in specs:
        if spec == "keys":
            sinks.append(KeyEventSink(key_mapping_for(protocol)))
        else:
            sinks.append(build_sink(spec))
    if not sinks:
        return NullSink()
    if len(sinks) == 1:
        return sinks[0]
    return FanOutSink(sinks)


def cmd_validate(args) -> int:
    protocol, problems = load_protocol(args.path)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    assert protocol is not None
    print(
        f"{args.path}: protocol {protocol.name!r} ok "
        f"({len(protocol.blocks)} blocks, {protocol.event_count} events, "
        f"{protocol.total_duration_ms} ms)"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    protocol, problems = load_protocol(args.path)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    assert protocol is not None
    try:
        sink = build_sinks(args.sink, protocol)
    except SinkError as exc:
        print(f"sink setup failed: {exc}", file=sys.stderr)
        return EXIT_SETUP
    if args.record:
        try:
            open(args.record, "w", encoding="utf-8").close()
        except OSError as exc:
            print(f"cannot write record to {args.record}: {exc}", file=sys.stderr)
            sink.close()
            return EXIT_SETUP

    clock = FakeClock(per_event_overhead_ms=args.overhead_ms) if args.fake_clock else SystemClock()
    session = Session(protocol, clock, sink, strategy=args.strategy)

    def on_sigint(_sig, _frame):
        session.control(abort())

    previous = signal.signal(signal.SIGINT, on_sigint)
    try:
        record = session.run()
    finally:
        signal.signal(signal.SIGINT, previous)
        sink.close()

    if args.record:
        scheduling.write_record_csv(record, args.record)
    print(
        f"session {record.outcome}: {len(record.events)} events, "
        f"end drift {scheduling.format_ms(record.end_drift_ms)} ms"
        + (f" ({record.failure})" if record.failure else "")
    )
    return EXIT_OK if record.outcome == scheduling.COMPLETED else EXIT_ABORTED


def cmd_simulate(args) -> int:
    protocol, problems = load_protocol(args.path)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    assert protocol is not None
    clock = FakeClock(per_event_overhead_ms=args.overhead_ms)
    record = Session(protocol, clock, NullSink(), strategy=args.strategy).run()

    stats_only = args.tol is None and args.overhead_ms > 0
    tol = args.tol if args.tol is not None else 0.0
    timeline = expected_timeline(protocol)
    timing = report.compare(timeline, record, tol_ms=tol)
    try:
        paths = report.render_report(
            timing, report.cumulative_curve(timeline), report.cumulative_curve(record), args.out_dir
        )
        scheduling.write_record_csv(record, os.path.join(args.out_dir, "record.csv"))
    except OSError as exc:
        print(f"cannot write report files: {exc}", file=sys.stderr)
        return EXIT_SETUP
    print(
        f"strategy={args.strategy} overhead={scheduling.format_ms(args.overhead_ms)}ms "
        f"events={len(timing.per_event)} "
        f"max|jitter|={scheduling.format_ms(timing.max_abs_jitter_ms)}ms "
        f"end_drift={scheduling.format_ms(timing.end_drift_ms)}ms "
        f"late={timing.late_count}"
    )
    if stats_only:
        print(f"report written to {paths['report']} (stats mode, no tolerance gate)")
        return EXIT_OK
    print(f"verdict: {timing.verdict} (tol {scheduling.format_ms(tol)} ms)")
    return EXIT_OK if timing.equivalent else EXIT_DIVERGENT


def _read_actual(path: str):
    """Sniff a realized-timeline CSV: execution record or receiver log."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header == scheduling.RECORD_CSV_HEADER:
        return scheduling.read_record_csv(path)
    if header == acquisition.RECEIVER_LOG_HEADER:
        events = []
        with open(path, "r", encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                line = line.strip()
                if line:
                    recv_ms, code, _seq = line.split(",")
                    events.append((float(recv_ms), int(code)))
        if not events:
            raise ValueError(f"{path}: receiver log has no events")
        # arrival clock starts at listener start, not session start: align the
        # first event to the schedule origin and compare relative structure
        base = events[0][0]
        return [(offset - base, code) for offset, code in events]
    raise ValueError(f"{path}: unrecognized header {header!r}")


def cmd_verify(args) -> int:
    protocol, problems = load_protocol(args.protocol)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    assert protocol is not None
    try:
        actual = _read_actual(args.actual)
    except (OSError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    timeline = expected_timeline(protocol)
    timing = report.compare(timeline, actual, tol_ms=args.tol)
    try:
        report.render_report(
            timing, report.cumulative_curve(timeline), report.cumulative_curve(actual), args.out_dir
        )
    except OSError as exc:
        print(f"cannot write report files: {exc}", file=sys.stderr)
        return EXIT_SETUP
    print(
        f"verdict: {timing.verdict} (tol {scheduling.format_ms(args.tol)} ms) "
        f"max|jitter|={scheduling.format_ms(timing.max_abs_jitter_ms)}ms "
        f"end_drift={scheduling.format_ms(timing.end_drift_ms)}ms"
    )
    if timing.detail:
        print(timing.detail)
    return EXIT_OK if timing.equivalent else EXIT_DIVERGENT


def cmd_acquire(args) -> int:
    try:
        listener = acquisition.AcquisitionListener(
            host=args.host,
            port=args.port,
            accept_timeout_s=args.accept_timeout,
            read_timeout_s=args.read_timeout,
        )
    except OSError as exc:
        print(f"cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_SETUP
    print(f"listening on {listener.host}:{listener.port}")
    listener.start()
    result = listener.result()
    series = acquisition.annotate(
        result.events, sample_rate_hz=args.rate, duration_ms=args.duration_ms
    )
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        acquisition.write_event_log(result.events, os.path.join(args.out_dir, "receiver_log.csv"))
        series.write_csv(os.path.join(args.out_dir, "annotated.csv"))
    except OSError as exc:
        print(f"cannot write capture files: {exc}", file=sys.stderr)
        return EXIT_SETUP
    print(
        f"capture {result.status}: {len(result.events)} events, "
        f"{result.corrupt_count} corrupt frames, {len(series)} sample rows"
    )
    if result.status == "timeout":
        return EXIT_ABORTED
    if result.status != "completed":
        print(result.error or "capture failed", file=sys.stderr)
        return EXIT_SETUP
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        config = ServiceConfig.load(
            config_path=args.config,
            host=args.host,
            port=args.port,
            protocol_dir=args.protocol_dir,
            default_strategy=args.strategy,
            default_tol_ms=args.tol,
            ui_dir=args.ui_dir,
        )
    except (OSError, ValueError) as exc:
        print(f"bad service configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    service = ControlService(config)
    service.start()
    print(f"control service on http://{config.host}:{service.port}/v1 "
          f"(protocols from {config.protocol_dir})")
    try:
        service.wait()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        service.stop()
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markline",
        description="Block-design marker pipeline: run, simulate, and verify event timelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a protocol file")
    p.add_argument("path")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="execute a protocol against real sinks")
    p.add_argument("path")
    p.add_argument("--strategy", choices=scheduling.STRATEGIES, default=scheduling.DEADLINE)
    p.add_argument("--sink", action="append", default=[],
                   help="null | file:PATH | loopback:HOST:PORT | keys (repeatable)")
    p.add_argument("--record", help="write the execution record CSV here")
    p.add_argument("--fake-clock", action="store_true",
                   help="run on a simulated clock (instant, deterministic)")
    p.add_argument("--overhead-ms", type=float, default=0.0,
                   help="per-event cost of the fake clock")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("simulate", help="deterministic fake-clock run plus timing report")
    p.add_argument("path")
    p.add_argument("--strategy", choices=scheduling.STRATEGIES, default=scheduling.NAIVE)
    p.add_argument("--overhead-ms", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=None,
                   help="equivalence tolerance in ms (default 0 when overhead is 0)")
    p.add_argument("--out-dir", default="simout")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", help="compare a recorded run against a protocol's schedule")
    p.add_argument("protocol")
    p.add_argument("actual", help="execution record or receiver log CSV")
    p.add_argument("--tol", type=float, default=report.DEFAULT_TOL_REAL_MS)
    p.add_argument("--out-dir", default="verifyout")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("acquire", help="simulated acquisition endpoint: capture and annotate")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7788)
    p.add_argument("--rate", type=float, default=acquisition.DEFAULT_SAMPLE_RATE_HZ,
                   help="sample rate in Hz")
    p.add_argument("--duration-ms", type=float, required=True)
    p.add_argument("--accept-timeout", type=float, default=10.0)
    p.add_argument("--read-timeout", type=float, default=120.0)
    p.add_argument("--out-dir", default="acqout")
    p.set_defaults(fn=cmd_acquire)

    p = sub.add_parser("serve", help="run the local operator control service")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--protocol-dir", default=None)
    p.add_argument("--strategy", choices=scheduling.STRATEGIES, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--ui-dir", default=None, help="serve the operator console from this directory at /ui")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
