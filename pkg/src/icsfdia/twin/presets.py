"""Built-in scenarios."""

from __future__ import annotations

from typing import Optional

from ..proto import Direction, Endpoint, Proto
from .scenario import (ComponentSpec, Kind, PadField, PlcSpec, PollSlot, SequenceCase,
                       TwinScenario)

HMI = Endpoint("192.168.1.100", 49152)
CONVEYOR = Endpoint("192.168.1.10", 44818)
WINDFARM = Endpoint("192.168.1.20", 502)

# HMI write command seen on the wire; the trailing byte flips between ff and fe
HMI_COMMAND = bytes.fromhex("01010004004e03206b25000e00010001ff")

SPEED_GROUP = ["wind speed", "turbine speed", "panel turbine speed"]


def _conveyor_status() -> bytes:
    out = bytearray(62)
    out[0:4] = bytes.fromhex("00020000")       # system switch at 0
    out[4:8] = bytes.fromhex("a0000000")
    out[8:12] = bytes.fromhex("05000000")      # conveyor belt speed at 10
    out[12:16] = bytes.fromhex("0c000000")
    out[16:20] = bytes.fromhex("06000000")     # panel turbine speed at 18..19
    out[20:25] = bytes.fromhex("0200000003")   # place a new barrel at 22
    out[25:30] = bytes.fromhex("0000080000")
    out[30:34] = bytes.fromhex("ffff0100")
    return bytes(out)


def _windfarm_status() -> bytes:
    # brake, contractor, wind, 000000, f77f, 4144, turbine speed (LE)
    return bytes.fromhex("010044000000f77f4144ff39")


def default_scenario(hmi_command: bool = False, fake_plc_count: int = 0,
                     pad_field: Optional[PadField] = None, rng_seed: int = 2020) -> TwinScenario:
    """Conveyor (CIP-like) and wind farm (Modbus-like) PLCs polled by one HMI.

    With ``hmi_command`` the last byte of the HMI's write request toggles
    between 0xff and 0xfe; it is off by default so the changeable fields are
    exactly the eight operator-visible components.
    """
    plcs = [PlcSpec("conveyor", CONVEYOR, Proto.CIP), PlcSpec("windfarm", WINDFARM, Proto.MODBUS)]
    poll = [
        PollSlot("conveyor", bytes.fromhex("4c04910a5461675f52656164000100"), 100, 70,
                 _conveyor_status()),
        PollSlot("conveyor", bytes.fromhex("4c049106537461747573000100"), 120, 90,
                 bytes.fromhex("00c40000") + b"RUN " + bytes(4)),
        PollSlot("windfarm", HMI_COMMAND, 80, 110, _windfarm_status()),
        PollSlot("windfarm", bytes.fromhex("0000000a"), 50, 60, bytes.fromhex("14") + bytes(10)),
    ]
    comps = [
        ComponentSpec("system switch", "conveyor", 0, 1, Kind.TOGGLE, 0, 1, 1, slot=0),
        ComponentSpec("conveyor belt speed", "conveyor", 10, 1, Kind.ANALOG, 0, 0x1D, 1, slot=0),
        ComponentSpec("panel turbine speed", "conveyor", 18, 2, Kind.ANALOG, 0, 0x0BB8, 100, slot=0),
        ComponentSpec("place a new barrel", "conveyor", 22, 1, Kind.TOGGLE, 0, 1, 1, slot=0),
        ComponentSpec("brake light", "windfarm", 0, 1, Kind.TOGGLE, 0, 1, 1, slot=2, initial=1),
        ComponentSpec("contractor light", "windfarm", 1, 1, Kind.TOGGLE, 0, 1, 1, slot=2),
        ComponentSpec("wind speed", "windfarm", 2, 1, Kind.ANALOG, 0, 100, 4, slot=2, initial=0x44),
        # wire bytes ff39..3b45, read little-endian
        ComponentSpec("turbine speed", "windfarm", 10, 2, Kind.ANALOG, 0x39FF, 0x453B, 2, slot=2),
    ]
    if hmi_command:
        comps.append(ComponentSpec("hmi command", "windfarm", 16, 1, Kind.ANALOG, 0xFE, 0xFF, 1,
                                   slot=2, direction=Direction.REQUEST, initial=0xFF))
    cases = [
        SequenceCase("system switch", [list(SPEED_GROUP), ["brake light"], ["contractor light"],
                                       ["place a new barrel"]]),
        SequenceCase("system switch", [list(SPEED_GROUP), ["brake light"], ["contractor light"]]),
    ]
    return TwinScenario("default", HMI, plcs, comps, poll, cycle_period_ms=100, cases=cases,
                        fake_plc_count=fake_plc_count, pad_field=pad_field, rng_seed=rng_seed)


def sutd_scenario(rng_seed: int = 7) -> TwinScenario:
    """Sixteen PLCs and one HMI; response lengths cycle through 183, 520 and 130."""
    hmi = Endpoint("192.168.1.200", 51000)
    plcs, poll, comps = [], [], []
    for i in range(16):
        pid = f"plc{i + 1}"
        proto = Proto.CIP if i % 2 == 0 else Proto.MODBUS
        port = 44818 if proto is Proto.CIP else 502
        plcs.append(PlcSpec(pid, Endpoint(f"192.168.1.{i + 1}", port), proto))
        variant = i % 3
        if variant == 0:
            resp_len = 183
            template = bytes.fromhex("8705084374ece7")
            comps += [
                ComponentSpec(f"{pid} parameter", pid, 3, 2, Kind.ANALOG, 0x7000, 0x7400, 16),
                ComponentSpec(f"{pid} setpoint", pid, 6, 1, Kind.ANALOG, 0x20, 0xE0, 8, initial=0xE0),
            ]
        elif variant == 1:
            resp_len = 520
            template = bytes.fromhex("10083010084030") + bytes.fromhex("0100c5b26d3b007c")
            comps += [
                ComponentSpec(f"{pid} function", pid, 8, 1, Kind.TOGGLE, 0, 1, 1),
                ComponentSpec(f"{pid} level", pid, 11, 2, Kind.ANALOG, 0x0100, 0x0400, 32, initial=0x0200),
            ]
        else:
            resp_len = 130
            template = bytes.fromhex("45443350524f54")
            comps += [
                ComponentSpec(f"{pid} status", pid, 3, 1, Kind.ANALOG, 0x43, 0x50, 13, initial=0x50),
            ]
        poll.append(PollSlot(pid, bytes.fromhex("4b0b") + bytes([i]), 60 + 2 * (i % 4), resp_len,
                             template))
    return TwinScenario("sutd", hmi, plcs, comps, poll, cycle_period_ms=1000, rng_seed=rng_seed)


def periodic_example_scenario() -> TwinScenario:
    """One PLC polled with request lengths 100,120,80,80,50 and replies 70,90,110,110,60."""
    plc = PlcSpec("plc", Endpoint("10.0.0.2", 502), Proto.MODBUS)
    lengths = [(100, 70), (120, 90), (80, 110), (80, 110), (50, 60)]
    poll = [PollSlot("plc", bytes([k]) if req != 80 else b"\x08", req, resp)
            for k, (req, resp) in enumerate(lengths)]
    return TwinScenario("periodic-example", Endpoint("10.0.0.1", 40000), [plc], [], poll,
                        cycle_period_ms=500)


PRESETS = {
    "default": default_scenario,
    "sutd": sutd_scenario,
    "periodic-example": periodic_example_scenario,
}
