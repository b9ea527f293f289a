"""Canonical trace files and flow classification.

Trace file layout (LF line endings, no trailing whitespace)::

    ICSTRACE v1
    <ts_us>\t<src_ip:port>\t<dst_ip:port>\t<MODBUS|CIP|OTHER>\t<lowercase hex of the whole frame>
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .proto import Direction, Endpoint, Frame, Proto

MAGIC = "ICSTRACE"
VERSION = 1
_HEX = re.compile(r"[0-9a-f]*")


class FormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class VersionError(ValueError):
    pass


@dataclass
class TraceMeta:
    version: int = VERSION
    scenario: Optional[str] = field(default=None, compare=False)
    seed: Optional[int] = field(default=None, compare=False)


@dataclass
class Trace:
    frames: List[Frame] = field(default_factory=list)
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)


def format_line(frame: Frame) -> str:
    return f"{frame.ts_us}\t{frame.src}\t{frame.dst}\t{frame.proto.value}\t{frame.raw.hex()}"


def dumps_trace(trace: Trace) -> str:
    lines = [f"{MAGIC} v{VERSION}"]
    lines.extend(format_line(f) for f in trace.frames)
    return "\n".join(lines) + "\n"


def save_trace(trace: Trace, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps_trace(trace))


def parse_line(line: str, lineno: int, columns: int = 5) -> Tuple[Frame, List[str]]:
    """Parse one frame line; extra columns beyond the first five are returned raw."""
    parts = line.split("\t")
    if len(parts) < 5 or len(parts) > columns:
        raise FormatError(lineno, f"expected {columns} tab-separated columns, got {len(parts)}")
    ts, src, dst, tag, payload = parts[:5]
    if not ts.isdigit():
        raise FormatError(lineno, f"bad timestamp {ts!r}")
    try:
        src_ep, dst_ep = Endpoint.parse(src), Endpoint.parse(dst)
    except ValueError as exc:
        raise FormatError(lineno, str(exc)) from None
    if len(payload) % 2 or not _HEX.fullmatch(payload):
        raise FormatError(lineno, "payload is not lowercase hex")
    frame = Frame(int(ts), src_ep, dst_ep, Proto.from_tag(tag), bytes.fromhex(payload))
    return frame, parts[5:]


def check_header(line: str) -> None:
    m = re.fullmatch(rf"{MAGIC} v(\d+)", line)
    if not m:
        raise FormatError(1, f"missing '{MAGIC} v{VERSION}' header")
    if int(m.group(1)) != VERSION:
        raise VersionError(f"unsupported trace version v{m.group(1)}")


def loads_trace(text: str) -> Trace:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(1, "empty file")
    check_header(lines[0])
    frames: List[Frame] = []
    last_ts = -1
    for lineno, line in enumerate(lines[1:], start=2):
        frame, _ = parse_line(line, lineno)
        if frame.ts_us < last_ts:
            raise FormatError(lineno, "timestamps must be non-decreasing")
        last_ts = frame.ts_us
        frames.append(frame)
    return Trace(frames)


def load_trace(path: Union[str, os.PathLike]) -> Trace:
    with open(path, encoding="ascii", newline="") as fh:
        try:
            text = fh.read()
        except UnicodeDecodeError as exc:
            raise FormatError(1, f"non-ASCII content: {exc}") from None
    return loads_trace(text)


@dataclass(frozen=True)
class FlowKey:
    hmi: Endpoint
    plc: Endpoint
    proto: Proto

    def __str__(self) -> str:
        return f"{self.hmi}>{self.plc}/{self.proto.value}"

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        pair, _, tag = text.partition("/")
        hmi, _, plc = pair.partition(">")
        return cls(Endpoint.parse(hmi), Endpoint.parse(plc), Proto(tag))

    def direction_of(self, frame: Frame) -> Optional[Direction]:
        if frame.proto is not self.proto:
            return None
        if frame.src == self.hmi and frame.dst == self.plc:
            return Direction.REQUEST
        if frame.src == self.plc and frame.dst == self.hmi:
            return Direction.RESPONSE
        return None


@dataclass
class Flow:
    key: FlowKey
    frames: List[Frame] = field(default_factory=list)
    # responses seen with no outstanding request
    unpaired: List[Frame] = field(default_factory=list)

    @property
    def requests(self) -> List[Frame]:
        return [f for f in self.frames if f.direction is Direction.REQUEST]

    @property
    def responses(self) -> List[Frame]:
        return [f for f in self.frames if f.direction is Direction.RESPONSE]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Classification:
    flows: List[Flow]
    ignored: int = 0

    def __iter__(self) -> Iterator[Flow]:
        return iter(self.flows)

    def __len__(self) -> int:
        return len(self.flows)

    def __getitem__(self, i):
        return self.flows[i]


def classify(trace: Trace) -> Classification:
    """Split a trace into per-PLC flows keyed by endpoint pair and protocol.

    The endpoint that sends first within a pair is taken to be the HMI.
    """
    flows: Dict[Tuple, Flow] = {}
    outstanding: Dict[Tuple, int] = {}
    ignored = 0
    for frame in trace.frames:
        if frame.proto is Proto.OTHER:
            ignored += 1
            continue
        pair = (frame.proto, frozenset((frame.src, frame.dst)))
        flow = flows.get(pair)
        if flow is None:
            flow = flows[pair] = Flow(FlowKey(frame.src, frame.dst, frame.proto))
            outstanding[pair] = 0
        direction = flow.key.direction_of(frame)
        if direction is None:
            # src == dst; treat as a request from the HMI side
            direction = Direction.REQUEST
        tagged = Frame(frame.ts_us, frame.src, frame.dst, frame.proto, frame.raw, direction)
        flow.frames.append(tagged)
        if direction is Direction.REQUEST:
            outstanding[pair] += 1
        elif outstanding[pair]:
            outstanding[pair] -= 1
        else:
            flow.unpaired.append(tagged)
    return Classification(list(flows.values()), ignored)
