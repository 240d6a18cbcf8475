from __future__ import annotations

import socket

import numpy as np
import pytest

from markline.acquisition import (
    RECEIVER_LOG_HEADER,
    AcquisitionListener,
    ReceivedEvent,
    annotate,
    write_event_log,
)
from markline.transport import LoopbackNetworkSink, MarkerFrame, MarkerSender, encode_frame

from .oracles import nearest_sample_row


def received(code: int, t_ms: float, seq: int = 0, ts: int | None = None) -> ReceivedEvent:
    return ReceivedEvent(frame=MarkerFrame(code=code, seq=seq, ts_ms=ts), recv_offset_ms=t_ms)


class TestAnnotate:
    def test_rounding_oracle_three_block_demo(self):
        events = [received(1, 0.0), received(2, 20_000.0, 1), received(1, 50_000.0, 2)]
        series = annotate(events, sample_rate_hz=2.0, duration_ms=70_000)
        assert len(series) == 140
        assert series.marker_rows() == [
            nearest_sample_row(t, 2.0) for t in (0, 20_000, 50_000)
        ] == [0, 40, 100]
        assert [int(series.markers[r]) for r in (0, 40, 100)] == [1, 2, 1]

    def test_zero_events(self):
        series = annotate([], sample_rate_hz=2.0, duration_ms=5000)
        assert len(series) == 10
        assert not series.markers.any()

    def test_collision_keeps_earliest(self):
        events = [received(1, 1000.0), received(2, 1001.0, 1)]
        series = annotate(events, sample_rate_hz=2.0, duration_ms=5000)
        row = nearest_sample_row(1000.0, 2.0)
        assert int(series.markers[row]) == 1
        assert series.conflicts == [(row, 1, 2)]

    def test_clamps_to_range(self):
        series = annotate([received(3, 10_000.0)], sample_rate_hz=2.0, duration_ms=1000)
        assert series.marker_rows() == [len(series) - 1]

    def test_sender_timestamp_wins_by_default(self):
        # receiver clock offsets are tiny, sender offsets carry the schedule
        events = [received(1, 0.5, ts=0), received(2, 1.0, 1, ts=20_000)]
        series = annotate(events, sample_rate_hz=2.0, duration_ms=30_000)
        assert series.marker_rows() == [0, 40]
        arrival = annotate(events, sample_rate_hz=2.0, duration_ms=30_000, time_source="arrival")
        assert arrival.marker_rows() == [0]  # both land on row 0, one collision
        assert len(arrival.conflicts) == 1

    def test_waveform_deterministic(self):
        a = annotate([], sample_rate_hz=10.0, duration_ms=2000)
        b = annotate([], sample_rate_hz=10.0, duration_ms=2000)
        assert np.array_equal(a.values, b.values)

    def test_marker_conservation(self):
        rng = np.random.default_rng(1)
        times = np.sort(rng.integers(0, 60_000, size=40))
        events = [received(int(1 + i % 250), float(t), i) for i, t in enumerate(times)]
        series = annotate(events, sample_rate_hz=2.0, duration_ms=60_000)
        assert len(series.marker_rows()) == len(events) - len(series.conflicts)

    def test_sequence_preservation_in_row_order(self):
        events = [received(5, 0.0), received(6, 3000.0, 1), received(7, 9000.0, 2)]
        series = annotate(events, sample_rate_hz=2.0, duration_ms=10_000)
        nonzero = [int(series.markers[r]) for r in series.marker_rows()]
        assert nonzero == [5, 6, 7]

    def test_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            annotate([], sample_rate_hz=0.0, duration_ms=100)

    def test_csv_export(self, tmp_path):
        series = annotate([received(1, 0.0)], sample_rate_hz=2.0, duration_ms=1000)
        path = tmp_path / "annotated.csv"
        series.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "index,value,marker"
        assert len(lines) == 1 + len(series)
        assert lines[1].endswith(",1")


class TestListener:
    def test_happy_path_five_frames(self):
        listener = AcquisitionListener(port=0, accept_timeout_s=5.0).start()
        sink = LoopbackNetworkSink("127.0.0.1", listener.port)
        sender = MarkerSender(sink)
        for code in (1, 2, 3, 4, 5):
            sender.send(code, ts_ms=code * 100.0)
        sink.close()
        result = listener.result(timeout_s=5.0)
        assert result.status == "completed"
        assert result.corrupt_count == 0
        assert [e.frame.code for e in result.events] == [1, 2, 3, 4, 5]
        offsets = [e.recv_offset_ms for e in result.events]
        assert all(b >= a for a, b in zip(offsets, offsets[1:]))

    def test_injected_corruption_counted_not_fatal(self):
        listener = AcquisitionListener(port=0, accept_timeout_s=5.0).start()
        with socket.create_connection(("127.0.0.1", listener.port)) as sock:
            good = [encode_frame(MarkerFrame(code=c, seq=i)) for i, c in enumerate((1, 2, 3, 4))]
            bad = bytearray(encode_frame(MarkerFrame(code=9, seq=99)))
            bad[1] ^= 0x20  # corrupt the code byte
            sock.sendall(good[0] + good[1] + bytes(bad) + good[2] + good[3])
            sock.shutdown(socket.SHUT_WR)
        result = listener.result(timeout_s=5.0)
        assert result.status == "completed"
        assert [e.frame.code for e in result.events] == [1, 2, 3, 4]
        assert result.corrupt_count == 1

    def test_timeout_when_no_sender(self):
        listener = AcquisitionListener(port=0, accept_timeout_s=0.2).start()
        result = listener.result(timeout_s=5.0)
        assert result.status == "timeout"
        assert result.events == []

    def test_single_sender_only(self):
        listener = AcquisitionListener(port=0, accept_timeout_s=5.0).start()
        first = socket.create_connection(("127.0.0.1", listener.port))
        first.sendall(encode_frame(MarkerFrame(code=1, seq=0)))
        # the listening socket closes after the first accept; a second
        # connection must be refused once that happens
        import time

        time.sleep(0.2)
        with pytest.raises(OSError):
            socket.create_connection(("127.0.0.1", listener.port), timeout=0.5)
        first.shutdown(socket.SHUT_WR)
        first.close()
        result = listener.result(timeout_s=5.0)
        assert result.status == "completed"
        assert len(result.events) == 1

    def test_event_log_csv(self, tmp_path):
        events = [received(1, 0.25), received(2, 1000.5, 1)]
        path = tmp_path / "receiver_log.csv"
        write_event_log(events, path)
        lines = path.read_text().splitlines()
        assert lines[0] == RECEIVER_LOG_HEADER == "recv_ms,code,seq"
        assert lines[1] == "0.250,1,0"
        assert lines[2] == "1000.500,2,1"

    def test_length_prefix_skipped_as_noise(self):
        # the loopback sink's length prefix must never confuse the decoder
        listener = AcquisitionListener(port=0, accept_timeout_s=5.0).start()
        sink = LoopbackNetworkSink("127.0.0.1", listener.port)
        MarkerSender(sink).send(42, ts_ms=5.0)
        sink.close()
        result = listener.result(timeout_s=5.0)
        assert [e.frame.code for e in result.events] == [42]
        assert result.corrupt_count == 0
