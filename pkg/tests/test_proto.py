import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsfdia.proto import (CIP_MAX_DATA, HEADER_SIZE, MODBUS_MAX_DATA, BadProtoId, CipLikeHeader,
                           DataTooLong, Direction, Endpoint, Frame, FrameError, LengthMismatch,
                           ModbusLikeHeader, Proto, Truncated, UnsupportedProto, decode_frame,
                           encode_frame, extract_data_field, frame_size, replace_data_field)

HMI = Endpoint("192.168.1.100", 49152)
PLC = Endpoint("192.168.1.20", 502)

u8 = st.integers(0, 0xFF)
u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)
data = st.binary(max_size=300)


@given(u16, u8, u8, data)
def test_modbus_round_trip(txn, unit, func, payload):
    raw = encode_frame(ModbusLikeHeader(txn, 0, None, unit, func), payload)
    header, back = decode_frame(raw, Proto.MODBUS)
    assert back == payload
    assert (header.txn_id, header.unit_id, header.func) == (txn, unit, func)
    assert header.length == len(payload) + 2
    assert len(raw) == HEADER_SIZE + len(payload)


@given(u32, u16, data)
def test_cip_round_trip(session, command, payload):
    raw = encode_frame(CipLikeHeader(session, command), payload)
    header, back = decode_frame(raw, Proto.CIP)
    assert back == payload
    assert (header.session, header.command, header.length) == (session, command, len(payload))


@given(st.sampled_from([Proto.MODBUS, Proto.CIP]), data, data)
def test_frame_size_cuts_concatenated_stream(proto, a, b):
    head = ModbusLikeHeader() if proto is Proto.MODBUS else CipLikeHeader()
    fa, fb = encode_frame(head, a), encode_frame(head, b)
    stream = fa + fb
    n = frame_size(stream, proto)
    assert stream[:n] == fa
    assert stream[n:n + frame_size(stream[n:], proto)] == fb


def test_length_field_written_from_data():
    raw = encode_frame(ModbusLikeHeader(length=999), b"\x01\x02")
    assert struct.unpack(">H", raw[4:6])[0] == 4
    assert len(raw) == 10


def test_data_too_long():
    with pytest.raises(DataTooLong):
        encode_frame(ModbusLikeHeader(), bytes(MODBUS_MAX_DATA + 1))
    with pytest.raises(DataTooLong):
        encode_frame(CipLikeHeader(), bytes(CIP_MAX_DATA + 1))
    assert len(encode_frame(CipLikeHeader(), bytes(CIP_MAX_DATA))) == CIP_MAX_DATA + HEADER_SIZE


def test_decode_errors():
    good = encode_frame(ModbusLikeHeader(), b"\xaa\xbb\xcc")
    with pytest.raises(Truncated):
        decode_frame(good[:5], Proto.MODBUS)
    with pytest.raises(Truncated):
        decode_frame(good[:-1], Proto.MODBUS)
    with pytest.raises(LengthMismatch):
        decode_frame(good + b"\x00", Proto.MODBUS)
    with pytest.raises(BadProtoId):
        decode_frame(good[:2] + b"\x00\x07" + good[4:], Proto.MODBUS)
    with pytest.raises(UnsupportedProto):
        decode_frame(good, Proto.OTHER)


def test_frame_size_needs_full_header():
    assert frame_size(b"\x00" * 7, Proto.CIP) is None
    assert frame_size(b"", Proto.MODBUS) is None


def test_fuzz_decode_never_crashes():
    rng = random.Random(7)
    for i in range(10_000):
        n = rng.choice([rng.randrange(0, 12), rng.randrange(0, 80)])
        raw = bytes(rng.getrandbits(8) for _ in range(n))
        if i % 3 == 0 and n >= 6:
            # plausible header so decoding gets past the first checks
            raw = raw[:2] + b"\x00\x00" + struct.pack(">H", max(n - 6, 0)) + raw[6:]
        proto = rng.choice([Proto.MODBUS, Proto.CIP])
        try:
            decode_frame(raw, proto)
        except FrameError:
            pass


def test_replace_data_field_keeps_header_and_length():
    raw = encode_frame(CipLikeHeader(0x1000), bytes.fromhex("06000000"))
    frame = Frame(10, PLC, HMI, Proto.CIP, raw, Direction.RESPONSE)
    out = replace_data_field(frame, bytes.fromhex("0600ffff"))
    assert out.raw[:HEADER_SIZE] == raw[:HEADER_SIZE]
    assert extract_data_field(out) == bytes.fromhex("0600ffff")
    with pytest.raises(LengthMismatch):
        replace_data_field(frame, b"\x00")


def test_hmi_command_data_field():
    # HMI command row of the changeable-field table: only the last byte moves (ff/fe)
    for tail in ("ff", "fe"):
        payload = bytes.fromhex("01010004004e03206b25000e00010001" + tail)
        raw = encode_frame(ModbusLikeHeader(txn_id=1), payload)
        assert decode_frame(raw, Proto.MODBUS)[1][-1] == int(tail, 16)
        assert len(raw) == HEADER_SIZE + 17


def test_endpoint_parse_and_order():
    ep = Endpoint.parse("10.0.0.1:502")
    assert str(ep) == "10.0.0.1:502"
    assert Endpoint("10.0.0.1", 1) < Endpoint("10.0.0.1", 2)
    with pytest.raises(ValueError):
        Endpoint.parse("nonsense")
    with pytest.raises(ValueError):
        Endpoint("10.0.0.1", 70000)


def test_proto_tags():
    assert Proto.from_tag("MODBUS") is Proto.MODBUS
    assert Proto.from_tag("whatever") is Proto.OTHER
    assert Direction.parse("response") is Direction.RESPONSE
