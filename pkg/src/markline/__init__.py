"""markline: single-host block-design marker pipeline.

Parse a protocol, run it against a clock and marker sinks, capture the
frames on a simulated acquisition endpoint, and verify that the realized
timeline matches the schedule.
"""

from .acquisition import (
    AcquisitionListener,
    AnnotatedSeries,
    CaptureResult,
    ReceivedEvent,
    annotate,
    listen,
)
from .clocks import Clock, FakeClock, SystemClock
from .protocol import (
    Block,
    Diagnostic,
    ExpectedTimeline,
    MarkerCode,
    ParseResult,
    Protocol,
    ProtocolError,
    ProtocolSpec,
    Repeat,
    TimelineEvent,
    expand,
    expected_timeline,
    iter_schedule,
    parse_protocol,
    serialize_protocol,
)
from .report import (
    CumulativeCurve,
    TimingReport,
    compare,
    cumulative_curve,
    render_report,
)
from .scheduling import (
    Command,
    ControlChannel,
    ExecutionRecord,
    RecordedEvent,
    ScriptedControl,
    Session,
    SessionSnapshot,
    abort,
    manual_marker,
    pause,
    read_record_csv,
    resume,
    run_deadline,
    run_naive,
    write_record_csv,
)
from .service import ControlService, ServiceConfig
from .transport import (
    DecodeResult,
    DeliveryRecord,
    FanOutSink,
    FileSink,
    KeyEventSink,
    LoopbackNetworkSink,
    MarkerFrame,
    MarkerSender,
    MarkerSink,
    MemorySink,
    NullSink,
    SinkError,
    StreamDecoder,
    StreamSink,
    decode_frame,
    encode_frame,
    key_mapping_for,
)

__version__ = "0.1.0"
