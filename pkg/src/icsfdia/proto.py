"""Simplified Modbus-like and CIP-like application framings.

Both framings use a fixed 8-byte big-endian header followed by the data
field. Only the structure needed to delimit the data field is modelled.

Modbus-like header::

    txn_id:u16  proto_id:u16  length:u16  unit_id:u8  func:u8

``length`` counts the bytes after the length field (unit, func, data).

CIP-like header::

    session:u32  command:u16  length:u16

``length`` counts the data bytes only.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import Optional, Tuple, Union

MODBUS_HEADER = struct.Struct(">HHHBB")
CIP_HEADER = struct.Struct(">IHH")
HEADER_SIZE = 8

MODBUS_MAX_DATA = 0xFFFF - 2
CIP_MAX_DATA = 0xFFFF


class FrameError(ValueError):
    """Base class for framing errors."""


class DataTooLong(FrameError):
    pass


class Truncated(FrameError):
    pass


class BadProtoId(FrameError):
    pass


class LengthMismatch(FrameError):
    """Buffer holds more bytes than the header declares."""


class UnsupportedProto(FrameError):
    pass


class Proto(enum.Enum):
    MODBUS = "MODBUS"
    CIP = "CIP"
    OTHER = "OTHER"

    @classmethod
    def from_tag(cls, tag: str) -> "Proto":
        try:
            return cls(tag)
        except ValueError:
            return cls.OTHER


class Direction(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        text = text.strip().lower()
        if text in ("req", "request"):
            return cls.REQUEST
        if text in ("resp", "rsp", "response"):
            return cls.RESPONSE
        raise ValueError(f"unknown direction {text!r}")


@dataclass(frozen=True, order=True)
class Endpoint:
    addr: str
    port: int

    def __post_init__(self):
        try:
            ipaddress.IPv4Address(self.addr)
        except ValueError as exc:
            raise ValueError(f"bad IPv4 address {self.addr!r}") from exc
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port!r}")

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        addr, sep, port = text.strip().rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"expected ip:port, got {text!r}")
        return cls(addr, int(port))

    def __str__(self) -> str:
        return f"{self.addr}:{self.port}"


@dataclass(frozen=True)
class ModbusLikeHeader:
    txn_id: int = 0
    proto_id: int = 0
    length: Optional[int] = None
    unit_id: int = 1
    func: int = 3


@dataclass(frozen=True)
class CipLikeHeader:
    session: int = 0
    command: int = 0x6F
    length: Optional[int] = None


Header = Union[ModbusLikeHeader, CipLikeHeader]


@dataclass(frozen=True)
class Frame:
    """One captured message. ``direction`` is filled in by flow classification."""

    ts_us: int
    src: Endpoint
    dst: Endpoint
    proto: Proto
    raw: bytes
    direction: Optional[Direction] = None

    @property
    def len(self) -> int:
        return len(self.raw)


def proto_of(header: Header) -> Proto:
    return Proto.MODBUS if isinstance(header, ModbusLikeHeader) else Proto.CIP


def encode_frame(header: Header, data: bytes) -> bytes:
    """Serialize header + data. The header's ``length`` is recomputed from ``data``."""
    data = bytes(data)
    if isinstance(header, ModbusLikeHeader):
        if len(data) > MODBUS_MAX_DATA:
            raise DataTooLong(f"{len(data)} bytes exceeds {MODBUS_MAX_DATA}")
        head = MODBUS_HEADER.pack(header.txn_id, header.proto_id, len(data) + 2,
                                  header.unit_id, header.func)
    elif isinstance(header, CipLikeHeader):
        if len(data) > CIP_MAX_DATA:
            raise DataTooLong(f"{len(data)} bytes exceeds {CIP_MAX_DATA}")
        head = CIP_HEADER.pack(header.session, header.command, len(data))
    else:
        raise UnsupportedProto(f"no framing for {type(header).__name__}")
    return head + data


def frame_size(buf: bytes, proto: Proto) -> Optional[int]:
    """Total size of the frame starting at ``buf[0]``, or None if the header is incomplete.

    Used to cut a TCP byte stream into frames.
    """
    if len(buf) < HEADER_SIZE:
        return None
    if proto is Proto.MODBUS:
        _, proto_id, length, _, _ = MODBUS_HEADER.unpack_from(buf)
        if proto_id != 0:
            raise BadProtoId(f"proto_id {proto_id:#06x}")
        if length < 2:
            raise Truncated(f"length field {length} shorter than unit+func")
        return 6 + length
    if proto is Proto.CIP:
        _, _, length = CIP_HEADER.unpack_from(buf)
        return HEADER_SIZE + length
    raise UnsupportedProto(proto.value)


def decode_frame(raw: bytes, proto: Proto) -> Tuple[Header, bytes]:
    raw = bytes(raw)
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"{len(raw)} bytes is shorter than the {HEADER_SIZE}-byte header")
    total = frame_size(raw, proto)
    if total > len(raw):
        raise Truncated(f"header declares {total} bytes, only {len(raw)} available")
    if total < len(raw):
        raise LengthMismatch(f"header declares {total} bytes, got {len(raw)}")
    data = raw[HEADER_SIZE:total]
    if proto is Proto.MODBUS:
        txn, pid, length, unit, func = MODBUS_HEADER.unpack_from(raw)
        return ModbusLikeHeader(txn, pid, length, unit, func), data
    session, command, length = CIP_HEADER.unpack_from(raw)
    return CipLikeHeader(session, command, length), data


def extract_data_field(frame: Frame) -> bytes:
    if frame.proto is Proto.OTHER:
        raise UnsupportedProto("frame carries no known application framing")
    return decode_frame(frame.raw, frame.proto)[1]


def replace_data_field(frame: Frame, data: bytes) -> Frame:
    """Return a copy of ``frame`` with a same-length data field swapped in."""
    if frame.proto is Proto.OTHER:
        raise UnsupportedProto("frame carries no known application framing")
    old = extract_data_field(frame)
    if len(old) != len(data):
        raise LengthMismatch("replacement data field must keep its length")
    raw = frame.raw[:HEADER_SIZE] + bytes(data)
    return Frame(frame.ts_us, frame.src, frame.dst, frame.proto, raw, frame.direction)
