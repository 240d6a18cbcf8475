"""Marker framing and delivery sinks.

Wire format (byte-exact, big-endian):

    0x02 | code(1) | seq(2) | flags(1) | [ts(4)] | cksum(1) | 0x03

flags bit0 set means the 4-byte sender timestamp is present; all other flag
bits must be zero. cksum is the XOR of every byte before it, STX included.
Frames are 7 bytes without a timestamp, 11 with one. The decoder
resynchronizes on 0x02, so a reader can join a dirty stream mid-way and only
ever loses the frames that were actually damaged.

Timestamps are sender-relative offsets from session start, not wall clock;
the receiving side never needs a synchronized clock.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import IO, Sequence

STX = 0x02
ETX = 0x03
_FLAG_TS = 0x01
FRAME_LEN_BARE = 7
FRAME_LEN_TS = 11
SEQ_MODULUS = 1 << 16
_TS_MODULUS = 1 << 32


class SinkError(Exception):
    """A sink could not deliver a frame."""


class SinkClosedError(SinkError):
    pass


class UnmappedCodeError(SinkError):
    pass


class FanOutError(SinkError):
    def __init__(self, message: str, failures: list[tuple[int, str]], delivered: int):
        super().__init__(message)
        self.failures = failures
        self.delivered = delivered


@dataclass(frozen=True)
class MarkerFrame:
    code: int
    seq: int
    ts_ms: int | None = None


def encode_frame(frame: MarkerFrame) -> bytes:
    if not 1 <= frame.code <= 255:
        raise ValueError(f"marker code {frame.code} outside [1,255]; 0 is reserved")
    if not 0 <= frame.seq < SEQ_MODULUS:
        raise ValueError(f"seq {frame.seq} outside unsigned 16-bit range")
    body = bytearray([STX, frame.code])
    body += frame.seq.to_bytes(2, "big")
    if frame.ts_ms is None:
        body.append(0x00)
    else:
        if not 0 <= frame.ts_ms < _TS_MODULUS:
            raise ValueError(f"ts_ms {frame.ts_ms} outside unsigned 32-bit range")
        body.append(_FLAG_TS)
        body += frame.ts_ms.to_bytes(4, "big")
    cksum = 0
    for b in body:
        cksum ^= b
    body.append(cksum)
    body.append(ETX)
    return bytes(body)


@dataclass(frozen=True)
class DecodeResult:
    status: str  # "ok" | "corrupt" | "truncated" | "no_frame"
    frame: MarkerFrame | None = None
    consumed: int = 0
    reason: str | None = None


def decode_frame(data: bytes | bytearray | memoryview) -> DecodeResult:
    """Decode the first frame found in ``data``. Total over arbitrary bytes.

    consumed tells the caller how much of the buffer to discard:
    ok       -> garbage prefix plus the whole frame
    corrupt  -> up to and including the bad frame's STX (rescan after it)
    truncated-> the garbage prefix only (keep the partial frame, read more)
    no_frame -> everything (no STX anywhere)
    """
    buf = bytes(data)
    start = buf.find(STX)
    if start < 0:
        return DecodeResult("no_frame", consumed=len(buf))
    if len(buf) - start < 5:
        return DecodeResult("truncated", consumed=start)
    flags = buf[start + 4]
    if flags not in (0x00, _FLAG_TS):
        return DecodeResult("corrupt", consumed=start + 1, reason="invalid flags byte")
    frame_len = FRAME_LEN_TS if flags & _FLAG_TS else FRAME_LEN_BARE
    if len(buf) - start < frame_len:
        return DecodeResult("truncated", consumed=start)
    raw = buf[start : start + frame_len]
    if raw[-1] != ETX:
        return DecodeResult("corrupt", consumed=start + 1, reason="missing end byte")
    cksum = 0
    for b in raw[:-2]:
        cksum ^= b
    if cksum != raw[-2]:
        return DecodeResult("corrupt", consumed=start + 1, reason="checksum mismatch")
    code = raw[1]
    if code == 0:
        return DecodeResult("corrupt", consumed=start + 1, reason="marker code 0 is reserved")
    seq = int.from_bytes(raw[2:4], "big")
    ts = int.from_bytes(raw[5:9], "big") if flags & _FLAG_TS else None
    return DecodeResult(
        "ok",
        frame=MarkerFrame(code=code, seq=seq, ts_ms=ts),
        consumed=start + frame_len,
    )


class StreamDecoder:
    """Incremental decoder over a byte stream; counts damaged frames."""

    def __init__(self):
        self._buf = bytearray()
        self.corrupt_count = 0

    def feed(self, data: bytes) -> list[MarkerFrame]:
        self._buf += data
        frames: list[MarkerFrame] = []
        while True:
            result = decode_frame(self._buf)
            if result.status == "ok":
                assert result.frame is not None
                frames.append(result.frame)
                del self._buf[: result.consumed]
            elif result.status == "corrupt":
                self.corrupt_count += 1
                del self._buf[: result.consumed]
            elif result.status == "no_frame":
                del self._buf[: result.consumed]
                return frames
            else:  # truncated: wait for more bytes
                del self._buf[: result.consumed]
                return frames


# --- sinks -------------------------------------------------------------------


class MarkerSink:
    """Delivery target for marker frames. Order of sends is preserved."""

    def send(self, frame: MarkerFrame) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class NullSink(MarkerSink):
    """Accepts and discards everything; the zero-cost default."""

    def send(self, frame: MarkerFrame) -> None:
        pass


class MemorySink(MarkerSink):
    def __init__(self):
        self.frames: list[MarkerFrame] = []

    def send(self, frame: MarkerFrame) -> None:
        self.frames.append(frame)


class StreamSink(MarkerSink):
    """Writes encoded frames to a binary stream (a serial port stands behind
    the same interface; only the loopback flavors ship)."""

    def __init__(self, stream: IO[bytes]):
        self._stream = stream
        self._closed = False

    def send(self, frame: MarkerFrame) -> None:
        if self._closed:
            raise SinkClosedError("stream sink is closed")
        try:
            self._stream.write(encode_frame(frame))
            self._stream.flush()
        except (OSError, ValueError) as exc:
            raise SinkError(f"stream write failed: {exc}") from exc

    def close(self) -> None:
        self._closed = True
        try:
            self._stream.flush()
        except (OSError, ValueError):
            pass


class LoopbackNetworkSink(MarkerSink):
    """Length-delimited frames over a local TCP stream.

    Each encoded frame is preceded by a single length byte (7 or 11), which
    lets a dumb reader do exact reads while the resynchronizing decoder on
    the acquisition side simply skips the prefix as noise.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 7788, connect_timeout_s: float = 2.0):
        self.host = host
        self.port = port
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout_s)
            self._sock.settimeout(5.0)
        except OSError as exc:
            raise SinkError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._closed = False

    def send(self, frame: MarkerFrame) -> None:
        if self._closed:
            raise SinkClosedError("loopback sink is closed")
        payload = encode_frame(frame)
        try:
            self._sock.sendall(bytes([len(payload)]) + payload)
        except OSError as exc:
            raise SinkError(f"loopback send failed: {exc}") from exc

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            self._sock.close()


DEFAULT_KIND_KEYS = {"rest": "r", "quiz": "q", "concept": "c", "feedback": "f"}


class KeyEventSink(MarkerSink):
    """Emulated keystroke sender: maps codes to key symbols and logs them.

    Real OS key injection is out of scope; this is the in-process stand-in
    with an observable log.
    """

    def __init__(self, mapping: dict[int, str]):
        self.mapping = dict(mapping)
        self.emitted: list[str] = []
        self._closed = False

    def send(self, frame: MarkerFrame) -> None:
        if self._closed:
            raise SinkClosedError("key-event sink is closed")
        try:
            symbol = self.mapping[frame.code]
        except KeyError:
            raise UnmappedCodeError(f"no key mapping for marker code {frame.code}") from None
        self.emitted.append(symbol)

    def close(self) -> None:
        self._closed = True


def key_mapping_for(protocol, overrides: dict[int, str] | None = None) -> dict[int, str]:
    """Build a complete code->key mapping for a protocol.

    Codes referenced by a block take that block kind's default key
    (rest/quiz/concept/feedback -> r/q/c/f); everything else falls back to
    the first letter of the marker name. Overrides win.
    """
    codes = protocol.marker_map()
    mapping: dict[int, str] = {}
    for block in protocol.blocks:
        for name in (block.onset_marker, block.offset_marker):
            if name is None:
                continue
            code = codes[name]
            if code not in mapping:
                mapping[code] = DEFAULT_KIND_KEYS.get(block.kind, name[0].lower())
    for marker in protocol.markers:
        mapping.setdefault(marker.code, marker.name[0].lower())
    if overrides:
        mapping.update(overrides)
    return mapping


class FileSink(MarkerSink):
    """Appends one CSV row per frame: seq,code,ts_ms."""

    HEADER = "seq,code,ts_ms"

    def __init__(self, path):
        self.path = path
        try:
            self._fh = open(path, "w", encoding="utf-8")
            self._fh.write(self.HEADER + "\n")
            self._fh.flush()
        except OSError as exc:
            raise SinkError(f"cannot open {path}: {exc}") from exc
        self._closed = False

    def send(self, frame: MarkerFrame) -> None:
        if self._closed:
            raise SinkClosedError("file sink is closed")
        ts = "" if frame.ts_ms is None else str(frame.ts_ms)
        try:
            self._fh.write(f"{frame.seq},{frame.code},{ts}\n")
            self._fh.flush()
        except OSError as exc:
            raise SinkError(f"file write failed: {exc}") from exc

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._fh.close()


class FanOutSink(MarkerSink):
    """Delivers to every child in declared order; a child failure never
    shadows the others, but any failure is reported."""

    def __init__(self, children: Sequence[MarkerSink]):
        self.children = list(children)

    def send(self, frame: MarkerFrame) -> None:
        failures: list[tuple[int, str]] = []
        delivered = 0
        for index, child in enumerate(self.children):
            try:
                child.send(frame)
                delivered += 1
            except SinkError as exc:
                failures.append((index, str(exc)))
        if failures:
            detail = "; ".join(f"child {i}: {msg}" for i, msg in failures)
            raise FanOutError(f"fan-out delivery failed: {detail}", failures, delivered)

    def close(self) -> None:
        for child in self.children:
            child.close()


# --- sender ------------------------------------------------------------------


@dataclass(frozen=True)
class DeliveryRecord:
    frame: MarkerFrame
    status: str  # "ok" | "partial" | "failed"
    sink_timestamp_ms: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class MarkerSender:
    """Owns the per-session frame sequence counter (wraps at 2^16).

    Keeps no per-frame history unless asked to (the scheduler loop must stay
    constant-space); pass track=True to retain delivery records.
    """

    def __init__(self, sink: MarkerSink, track: bool = False):
        self.sink = sink
        self.next_seq = 0
        self.deliveries: list[DeliveryRecord] | None = [] if track else None

    def send(self, code: int, ts_ms: float | None = None, at_ms: float = 0.0) -> DeliveryRecord:
        frame = MarkerFrame(
            code=code,
            seq=self.next_seq,
            ts_ms=None if ts_ms is None else int(max(ts_ms, 0.0)) % _TS_MODULUS,
        )
        self.next_seq = (self.next_seq + 1) % SEQ_MODULUS
        status, error = "ok", None
        try:
            self.sink.send(frame)
        except FanOutError as exc:
            status = "partial" if exc.delivered > 0 else "failed"
            error = str(exc)
        except SinkError as exc:
            status, error = "failed", str(exc)
        record = DeliveryRecord(frame=frame, status=status, sink_timestamp_ms=at_ms, error=error)
        if self.deliveries is not None:
            self.deliveries.append(record)
        return record
