"""Deterministic HMI/PLC polling simulator."""

from __future__ import annotations

import dataclasses
import ipaddress
import json
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from ..capture import Trace, TraceMeta
from ..proto import (CipLikeHeader, Direction, Endpoint, Frame, ModbusLikeHeader, Proto,
                     encode_frame)
from .scenario import (ComponentSpec, ConfigInvalid, Kind, PlcSpec, PollSlot, TwinScenario,
                       validate)


@dataclass
class TruthField:
    name: str
    plc_id: str
    plc: str
    proto: str
    direction: str
    frame_length: int
    offset: int
    width: int
    lower: int
    upper: int
    scale: int
    kind: str
    endianness: str
    decoy: bool = False

    @property
    def key(self) -> Tuple[str, str, str, int, int, int]:
        return (self.plc, self.proto, self.direction, self.frame_length, self.offset, self.width)


@dataclass
class RealizedCase:
    case: int
    trigger: str
    stages: List[List[str]]
    # first poll step of the trigger and of every stage
    steps: List[int]
    start_us: int


@dataclass
class GroundTruth:
    scenario: str
    seed: int
    cycles: int
    fields: List[TruthField] = field(default_factory=list)
    cases: List[RealizedCase] = field(default_factory=list)
    # data field of every emitted frame, parallel to Trace.frames; kept in memory only
    payloads: List[bytes] = field(default_factory=list, repr=False, compare=False)

    @property
    def real_fields(self) -> List[TruthField]:
        return [f for f in self.fields if not f.decoy]

    @property
    def decoys(self) -> List[TruthField]:
        return [f for f in self.fields if f.decoy]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "cycles": self.cycles,
            "fields": [dataclasses.asdict(f) for f in self.fields],
            "cases": [dataclasses.asdict(c) for c in self.cases],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GroundTruth":
        return cls(d["scenario"], d["seed"], d["cycles"],
                   [TruthField(**f) for f in d["fields"]],
                   [RealizedCase(**c) for c in d["cases"]])


def save_truth(truth: GroundTruth, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(truth.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_truth(path: Union[str, os.PathLike]) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_dict(json.load(fh))


def _free_addresses(s: TwinScenario, count: int) -> List[str]:
    used = {p.endpoint.addr for p in s.plcs} | {s.hmi.addr}
    net = ipaddress.IPv4Network(f"{s.hmi.addr}/24", strict=False)
    hosts = [str(h) for h in net.hosts() if str(h) not in used]
    # fill from the top of the subnet, away from the real devices
    hosts.reverse()
    if len(hosts) < count:
        raise ConfigInvalid([f"no room for {count} fake PLCs in {net}"])
    return hosts[:count]


def apply_countermeasures(s: TwinScenario) -> TwinScenario:
    """Materialize fake PLCs as explicit poll slots with constant payloads.

    The returned scenario has ``fake_plc_count == 0``; the fakes appear as
    ordinary ``PlcSpec`` entries flagged ``fake``. The pad field is validated
    here and emitted by ``run_scenario``.
    """
    validate(s)
    if s.fake_plc_count == 0:
        return s
    out = dataclasses.replace(s, plcs=list(s.plcs), poll_cycle=list(s.poll_cycle), fake_plc_count=0)
    real_slots = [(i, sl) for i, sl in enumerate(s.poll_cycle) if not s.plc(sl.plc_id).fake]
    for k, addr in enumerate(_free_addresses(s, s.fake_plc_count)):
        src_index, src_slot = real_slots[k % len(real_slots)]
        mimic = s.plc(src_slot.plc_id)
        fake_id = f"fake{k}"
        out.plcs.append(PlcSpec(fake_id, Endpoint(addr, mimic.endpoint.port), mimic.proto, fake=True))
        req = bytearray(src_slot.base_data(Direction.REQUEST))
        resp = bytearray(src_slot.base_data(Direction.RESPONSE))
        for c in s.components:
            if s.slot_of(c) == src_index:
                target = req if c.direction is Direction.REQUEST else resp
                target[c.field_offset:c.field_offset + c.width] = c.encode(c.start_value)
        out.poll_cycle.append(PollSlot(fake_id, bytes(req), src_slot.request_length,
                                       src_slot.response_length, bytes(resp)))
    validate(out)
    return out


class _Component:
    """Mutable value state for one component during a run."""

    def __init__(self, spec: ComponentSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.value = spec.start_value
        # visit both bounds and the first grid step early so the range is observable
        self.tour = deque([spec.upper, spec.lower + spec.scale, spec.lower])

    def _walk(self, allow_still: bool) -> int:
        lo, hi, step = self.spec.lower, self.spec.upper, self.spec.scale
        moves = [m for m in (-step, step) if lo <= self.value + m <= hi]
        if allow_still:
            moves.append(0)
        return self.value + self.rng.choice(moves) if moves else self.value

    def change(self, forced: bool) -> None:
        spec = self.spec
        if spec.kind is Kind.TOGGLE:
            self.value ^= 1
            return
        if spec.kind is Kind.COUNTER:
            nxt = self.value + spec.scale
            self.value = spec.lower if nxt > spec.upper else nxt
            return
        while self.tour:
            candidate = self.tour.popleft()
            if candidate != self.value and spec.lower <= candidate <= spec.upper:
                self.value = candidate
                return
        self.value = self._walk(allow_still=not forced)


def _schedule(s: TwinScenario, cycles: int, rng: random.Random):
    """Map poll step -> list of (component names, forced) and list the realized cases."""
    P = len(s.poll_cycle)
    events: Dict[int, List[Tuple[List[str], bool]]] = {}
    realized: List[Tuple[int, int, List[int]]] = []
    case_names = s.case_components()
    free = [c.name for c in s.components if c.name not in case_names]
    drift_offset = max(1, s.case_interval_cycles * 7 // 10)
    k = 0
    while True:
        start = s.first_case_cycle + k * max(1, s.case_interval_cycles)
        if start >= cycles:
            break
        phase = rng.randrange(P)
        if s.cases:
            ci = k % len(s.cases)
            case = s.cases[ci]
            last = start + len(case.ordered_changes) * s.stage_gap_cycles
            if last < cycles:
                steps = []
                for j, names in enumerate([[case.trigger]] + case.ordered_changes):
                    step = (start + j * s.stage_gap_cycles) * P + phase
                    events.setdefault(step, []).append((list(names), True))
                    steps.append(step)
                realized.append((ci, start, steps))
        drift = start + drift_offset
        if free and drift < cycles:
            events.setdefault(drift * P + rng.randrange(P), []).append((free, False))
        k += 1
    return events, realized


def run_scenario(s: TwinScenario, cycles: int) -> Tuple[Trace, GroundTruth]:
    if cycles < 1:
        raise ConfigInvalid(["cycles must be >= 1"])
    s = apply_countermeasures(s)
    P = len(s.poll_cycle)
    spacing = s.cycle_period_ms * 1000 // P
    root = random.Random(s.rng_seed)
    sched_rng = random.Random(root.getrandbits(64))
    jitter_rng = random.Random(root.getrandbits(64))
    comps = {c.name: _Component(c, random.Random(root.getrandbits(64))) for c in s.components}
    pad_rng = random.Random(s.pad_field.seed) if s.pad_field else None
    events, realized = _schedule(s, cycles, sched_rng)

    by_slot: Dict[Tuple[int, Direction], List[_Component]] = {}
    for c in comps.values():
        by_slot.setdefault((s.slot_of(c.spec), c.spec.direction), []).append(c)
    base = {(i, d): slot.base_data(d) for i, slot in enumerate(s.poll_cycle) for d in Direction}
    plc_index = {p.plc_id: i for i, p in enumerate(s.plcs)}
    txn = {p.plc_id: 0 for p in s.plcs}

    frames: List[Frame] = []
    payloads: List[bytes] = []
    for n in range(cycles * P):
        for names, forced in events.get(n, ()):
            for name in names:
                comps[name].change(forced)
        i = n % P
        slot = s.poll_cycle[i]
        plc = s.plc(slot.plc_id)
        t_req = n * spacing
        t_resp = t_req + spacing // 4
        if s.jitter:
            t_req += jitter_rng.randrange(spacing // 10 + 1)
            t_resp = t_req + spacing // 4 + jitter_rng.randrange(spacing // 10 + 1)
        for direction, ts in ((Direction.REQUEST, t_req), (Direction.RESPONSE, t_resp)):
            data = bytearray(base[i, direction])
            for c in by_slot.get((i, direction), ()):
                off = c.spec.field_offset
                data[off:off + c.spec.width] = c.spec.encode(c.value)
            pad = s.pad_field
            if direction is Direction.RESPONSE and pad is not None and pad.slot == i:
                data[pad.offset:pad.offset + pad.width] = pad_rng.getrandbits(8 * pad.width).to_bytes(pad.width, "big")
            if plc.proto is Proto.MODBUS:
                header = ModbusLikeHeader(txn_id=txn[plc.plc_id], unit_id=1, func=3)
            else:
                header = CipLikeHeader(session=0x1000 + plc_index[plc.plc_id], command=0x6F)
            raw = encode_frame(header, bytes(data))
            src, dst = (s.hmi, plc.endpoint) if direction is Direction.REQUEST else (plc.endpoint, s.hmi)
            frames.append(Frame(ts, src, dst, plc.proto, raw))
            payloads.append(bytes(data))
        txn[plc.plc_id] = (txn[plc.plc_id] + 1) & 0xFFFF

    truth = GroundTruth(s.name, s.rng_seed, cycles, payloads=payloads)
    for c in s.components:
        slot = s.poll_cycle[s.slot_of(c)]
        plc = s.plc(c.plc_id)
        length = slot.request_length if c.direction is Direction.REQUEST else slot.response_length
        truth.fields.append(TruthField(c.name, c.plc_id, str(plc.endpoint), plc.proto.value,
                                       c.direction.value, length, c.field_offset, c.width,
                                       c.lower, c.upper, c.scale, c.kind.value, c.endianness.value))
    if s.pad_field is not None:
        pad = s.pad_field
        slot = s.poll_cycle[pad.slot]
        plc = s.plc(slot.plc_id)
        truth.fields.append(TruthField("pad", slot.plc_id, str(plc.endpoint), plc.proto.value,
                                       Direction.RESPONSE.value, slot.response_length, pad.offset,
                                       pad.width, 0, 256 ** pad.width - 1, 1, "Analog", "BE",
                                       decoy=True))
    for ci, start, steps in realized:
        case = s.cases[ci]
        truth.cases.append(RealizedCase(ci, case.trigger, [list(st) for st in case.ordered_changes],
                                        steps, steps[0] * spacing))
    trace = Trace(frames, TraceMeta(scenario=s.name, seed=s.rng_seed))
    return trace, truth
