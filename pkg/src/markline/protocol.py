"""Block-design protocol model and its text format.

A protocol is a named marker vocabulary plus an ordered list of timed blocks,
optionally grouped under ``repeat n { ... }``. Parsing is total: it never
raises on bad input, it collects diagnostics with line/column positions so an
operator can fix everything in one pass.

Grammar (one statement per line, ``#`` comments):

    protocol NAME
    marker IDENT=INT            # code in [1, 255]; 0 is reserved
    block LABEL ONSET DURATION [offset IDENT]
    repeat INT { ... }          # items inline or on following lines

Durations take ms/s/min suffixes; everything is stored as integer
milliseconds.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

MAX_MARKER_CODE = 255
MAX_NESTING_DEPTH = 8

BLOCK_KINDS = ("rest", "concept", "quiz", "feedback", "custom")


class ProtocolError(Exception):
    """A protocol cannot be used as requested (e.g. expands to zero blocks)."""


@dataclass(frozen=True)
class MarkerCode:
    name: str
    code: int


@dataclass(frozen=True)
class Block:
    label: str
    onset_marker: str
    duration_ms: int
    offset_marker: str | None = None
    kind: str = ""

    def __post_init__(self):
        if not self.kind:
            derived = self.label.lower()
            object.__setattr__(
                self, "kind", derived if derived in BLOCK_KINDS[:-1] else "custom"
            )


@dataclass(frozen=True)
class Repeat:
    count: int
    items: tuple["Item", ...]


Item = Union[Block, Repeat]


@dataclass(frozen=True)
class ProtocolSpec:
    """Authoring form: repeats not yet expanded."""

    name: str
    markers: tuple[MarkerCode, ...]
    items: tuple[Item, ...]

    def marker_map(self) -> dict[str, int]:
        return {m.name: m.code for m in self.markers}


@dataclass(frozen=True)
class Protocol:
    """Runnable form: repeats expanded, event count fixed."""

    name: str
    markers: tuple[MarkerCode, ...]
    blocks: tuple[Block, ...]
    event_count: int

    def marker_map(self) -> dict[str, int]:
        return {m.name: m.code for m in self.markers}

    @property
    def total_duration_ms(self) -> int:
        return sum(b.duration_ms for b in self.blocks)


@dataclass(frozen=True)
class TimelineEvent:
    offset_ms: int
    marker: int
    label: str
    block_index: int
    block_duration_ms: int
    is_offset: bool = False


@dataclass(frozen=True)
class ExpectedTimeline:
    events: tuple[TimelineEvent, ...]
    total_duration_ms: int


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


@dataclass
class ParseResult:
    spec: ProtocolSpec | None
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.spec is not None and not self.diagnostics


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<comment>\#[^\n]*)
      | (?P<newline>\n)
      | (?P<duration>\d+(?:ms|min|s)\b)
      | (?P<int>\d+\b)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<eq>=)
      | (?P<lbrace>\{)
      | (?P<rbrace>\})
    """,
    re.VERBOSE,
)

_DURATION_UNITS = {"ms": 1, "s": 1000, "min": 60_000}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> tuple[list[_Token], list[Diagnostic]]:
    tokens: list[_Token] = []
    diagnostics: list[Diagnostic] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            diagnostics.append(
                Diagnostic(line, col, f"unexpected character {text[pos]!r}")
            )
            pos += 1
            col += 1
            continue
        kind = m.lastgroup or ""
        value = m.group()
        if kind == "newline":
            tokens.append(_Token("newline", value, line, col))
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(_Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens, diagnostics


def _parse_duration(token: _Token) -> int:
    m = re.fullmatch(r"(\d+)(ms|min|s)", token.text)
    assert m is not None
    return int(m.group(1)) * _DURATION_UNITS[m.group(2)]


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []
        self.markers: list[MarkerCode] = []
        self.marker_names: dict[str, _Token] = {}
        self.marker_codes: dict[int, _Token] = {}

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, tok: _Token, message: str) -> None:
        self.diagnostics.append(Diagnostic(tok.line, tok.col, message))

    def expect(self, kind: str, what: str) -> _Token | None:
        tok = self.peek()
        if tok.kind != kind:
            self.error(tok, f"expected {what}, found {tok.text or tok.kind!r}")
            return None
        return self.advance()

    def skip_newlines(self) -> None:
        while self.peek().kind == "newline":
            self.advance()

    def skip_to_line_end(self) -> None:
        while self.peek().kind not in ("newline", "eof", "rbrace"):
            self.advance()

    def parse(self) -> tuple[str, tuple[Item, ...]]:
        self.skip_newlines()
        name = ""
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "protocol":
            self.advance()
            name_tok = self.expect("ident", "protocol name")
            if name_tok:
                name = name_tok.text
            self.skip_to_line_end()
        else:
            self.error(tok, "no protocol declaration found (expected 'protocol NAME')")
        self.skip_newlines()
        while self.peek().kind == "ident" and self.peek().text == "marker":
            self.parse_marker_decl()
            self.skip_newlines()
        items = self.parse_items(depth=0, until_rbrace=False)
        return name, items

    def parse_marker_decl(self) -> None:
        self.advance()  # 'marker'
        name_tok = self.expect("ident", "marker name")
        if name_tok is None:
            self.skip_to_line_end()
            return
        if self.expect("eq", "'='") is None:
            self.skip_to_line_end()
            return
        code_tok = self.expect("int", "marker code")
        if code_tok is None:
            self.skip_to_line_end()
            return
        code = int(code_tok.text)
        if not 1 <= code <= MAX_MARKER_CODE:
            self.error(code_tok, f"code out of range [1,{MAX_MARKER_CODE}]")
        if name_tok.text in self.marker_names:
            self.error(name_tok, f"duplicate marker name {name_tok.text!r}")
        elif code in self.marker_codes:
            self.error(code_tok, f"duplicate marker code {code}")
        else:
            self.marker_names[name_tok.text] = name_tok
            self.marker_codes[code] = code_tok
            self.markers.append(MarkerCode(name_tok.text, code))
        self.skip_to_line_end()

    def parse_items(self, depth: int, until_rbrace: bool) -> tuple[Item, ...]:
        items: list[Item] = []
        while True:
            self.skip_newlines()
            tok = self.peek()
            if tok.kind == "eof":
                if until_rbrace:
                    self.error(tok, "unclosed 'repeat' group (expected '}')")
                break
            if tok.kind == "rbrace":
                if until_rbrace:
                    self.advance()
                else:
                    self.error(tok, "unmatched '}'")
                    self.advance()
                    continue
                break
            if tok.kind == "ident" and tok.text == "block":
                block = self.parse_block()
                if block is not None:
                    items.append(block)
            elif tok.kind == "ident" and tok.text == "repeat":
                repeat = self.parse_repeat(depth)
                if repeat is not None:
                    items.append(repeat)
            elif tok.kind == "ident" and tok.text == "marker":
                self.error(tok, "marker declarations must precede blocks")
                self.skip_to_line_end()
            else:
                self.error(
                    tok, f"expected 'block' or 'repeat', found {tok.text or tok.kind!r}"
                )
                self.skip_to_line_end()
        return tuple(items)

    def parse_block(self) -> Block | None:
        self.advance()  # 'block'
        label_tok = self.expect("ident", "block label")
        onset_tok = self.expect("ident", "onset marker name") if label_tok else None
        dur_tok = self.expect("duration", "duration (e.g. 20s)") if onset_tok else None
        if dur_tok is None:
            self.skip_to_line_end()
            return None
        offset_name: str | None = None
        if self.peek().kind == "ident" and self.peek().text == "offset":
            self.advance()
            off_tok = self.expect("ident", "offset marker name")
            if off_tok is not None:
                offset_name = off_tok.text
                if offset_name not in self.marker_names:
                    self.error(off_tok, f"unknown marker reference {offset_name!r}")
        if self.peek().kind not in ("newline", "eof", "rbrace"):
            self.error(self.peek(), "unexpected trailing tokens after block")
            self.skip_to_line_end()
        duration_ms = _parse_duration(dur_tok)
        if duration_ms < 1:
            self.error(dur_tok, "duration must be at least 1 ms")
        assert label_tok is not None and onset_tok is not None
        if onset_tok.text not in self.marker_names:
            self.error(onset_tok, f"unknown marker reference {onset_tok.text!r}")
        return Block(
            label=label_tok.text,
            onset_marker=onset_tok.text,
            duration_ms=duration_ms,
            offset_marker=offset_name,
        )

    def parse_repeat(self, depth: int) -> Repeat | None:
        rep_tok = self.advance()  # 'repeat'
        count_tok = self.expect("int", "repeat count")
        if count_tok is None:
            self.skip_to_line_end()
            return None
        count = int(count_tok.text)
        if count < 1:
            self.error(count_tok, "repeat count must be at least 1")
        if self.expect("lbrace", "'{'") is None:
            self.skip_to_line_end()
            return None
        if depth + 1 > MAX_NESTING_DEPTH:
            self.error(rep_tok, f"repeat nesting deeper than {MAX_NESTING_DEPTH}")
        items = self.parse_items(depth + 1, until_rbrace=True)
        return Repeat(count=max(count, 1), items=items)


def parse_protocol(text: str) -> ParseResult:
    """Parse protocol source. Never raises; bad input yields diagnostics."""
    tokens, diagnostics = _tokenize(text)
    parser = _Parser(tokens)
    name, items = parser.parse()
    diagnostics.extend(parser.diagnostics)
    if diagnostics:
        return ParseResult(spec=None, diagnostics=sorted(
            diagnostics, key=lambda d: (d.line, d.col)
        ))
    return ParseResult(
        spec=ProtocolSpec(name=name, markers=tuple(parser.markers), items=items)
    )


# --- serializer ------------------------------------------------------------


def format_duration(duration_ms: int) -> str:
    if duration_ms % 60_000 == 0:
        return f"{duration_ms // 60_000}min"
    if duration_ms % 1000 == 0:
        return f"{duration_ms // 1000}s"
    return f"{duration_ms}ms"


def _serialize_items(items: tuple[Item, ...], indent: int, out: list[str]) -> None:
    pad = "  " * indent
    for item in items:
        if isinstance(item, Block):
            line = f"{pad}block {item.label} {item.onset_marker} {format_duration(item.duration_ms)}"
            if item.offset_marker:
                line += f" offset {item.offset_marker}"
            out.append(line)
        else:
            out.append(f"{pad}repeat {item.count} {{")
            _serialize_items(item.items, indent + 1, out)
            out.append(f"{pad}}}")


def serialize_protocol(spec: ProtocolSpec) -> str:
    """Canonical text form; parse_protocol(serialize_protocol(s)).spec == s."""
    lines = [f"protocol {spec.name}"]
    lines.extend(f"marker {m.name}={m.code}" for m in spec.markers)
    _serialize_items(spec.items, 0, lines)
    return "\n".join(lines) + "\n"


# --- expansion and timeline ------------------------------------------------


def _expand_items(items: tuple[Item, ...], out: list[Block]) -> None:
    for item in items:
        if isinstance(item, Block):
            out.append(item)
        else:
            for _ in range(item.count):
                _expand_items(item.items, out)


def expand(spec: ProtocolSpec) -> Protocol:
    """Unroll repeats depth-first. Raises ProtocolError on an empty expansion."""
    blocks: list[Block] = []
    _expand_items(spec.items, blocks)
    if not blocks:
        raise ProtocolError(f"protocol {spec.name!r} expands to zero blocks; not runnable")
    event_count = sum(1 + (b.offset_marker is not None) for b in blocks)
    return Protocol(
        name=spec.name,
        markers=spec.markers,
        blocks=tuple(blocks),
        event_count=event_count,
    )


def iter_schedule(protocol: Protocol) -> Iterator[TimelineEvent]:
    """Lazily enumerate the expected marker schedule in dispatch order.

    Onset of block k fires at the sum of all earlier durations; an offset
    marker fires at its block's end. Constant memory: nothing is
    materialized.
    """
    codes = protocol.marker_map()
    cum = 0
    for index, block in enumerate(protocol.blocks):
        yield TimelineEvent(
            offset_ms=cum,
            marker=codes[block.onset_marker],
            label=block.label,
            block_index=index,
            block_duration_ms=block.duration_ms,
        )
        if block.offset_marker is not None:
            yield TimelineEvent(
                offset_ms=cum + block.duration_ms,
                marker=codes[block.offset_marker],
                label=block.label,
                block_index=index,
                block_duration_ms=block.duration_ms,
                is_offset=True,
            )
        cum += block.duration_ms


def expected_timeline(protocol: Protocol) -> ExpectedTimeline:
    if not protocol.blocks:
        raise ProtocolError("cannot build a timeline for a protocol with no blocks")
    return ExpectedTimeline(
        events=tuple(iter_schedule(protocol)),
        total_duration_ms=protocol.total_duration_ms,
    )
