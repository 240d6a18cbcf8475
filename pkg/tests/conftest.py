from __future__ import annotations

import pytest

from markline.protocol import Protocol, expand, parse_protocol


def protocol_from_source(source: str) -> Protocol:
    result = parse_protocol(source)
    assert result.ok, f"fixture protocol failed to parse: {result.diagnostics}"
    assert result.spec is not None
    return expand(result.spec)


@pytest.fixture
def three_block_demo() -> Protocol:
    """The 70 s rest/quiz/rest protocol used across the suite."""
    return protocol_from_source(
        "protocol demo\n"
        "marker REST=1\n"
        "marker QUIZ=2\n"
        "block rest REST 20s\n"
        "block quiz QUIZ 30s\n"
        "block rest REST 20s\n"
    )


@pytest.fixture
def ten_tick_protocol() -> Protocol:
    """Ten onset-only 100 ms blocks, the drift-law workhorse."""
    return protocol_from_source(
        "protocol ten\nmarker TICK=1\nrepeat 10 { block tick TICK 100ms }\n"
    )
