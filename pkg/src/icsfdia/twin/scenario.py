"""Declarative twin scenarios and their YAML representation."""

from __future__ import annotations

import dataclasses
import enum
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from ..proto import HEADER_SIZE, Direction, Endpoint, Proto


class ConfigInvalid(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class Kind(enum.Enum):
    TOGGLE = "Toggle"
    ANALOG = "Analog"
    COUNTER = "Counter"


class Endian(enum.Enum):
    LE = "LE"
    BE = "BE"

    @property
    def byteorder(self) -> str:
        return "little" if self is Endian.LE else "big"


@dataclass
class ComponentSpec:
    name: str
    plc_id: str
    field_offset: int
    width: int = 1
    kind: Kind = Kind.ANALOG
    lower: int = 0
    upper: int = 1
    scale: int = 1
    endianness: Endian = Endian.LE
    # index into poll_cycle; None means the PLC's first slot
    slot: Optional[int] = None
    direction: Direction = Direction.RESPONSE
    initial: Optional[int] = None

    @property
    def start_value(self) -> int:
        return self.lower if self.initial is None else self.initial

    def encode(self, value: int) -> bytes:
        return value.to_bytes(self.width, self.endianness.byteorder)


@dataclass
class PlcSpec:
    plc_id: str
    endpoint: Endpoint
    proto: Proto
    fake: bool = False


@dataclass
class PollSlot:
    plc_id: str
    request_template: bytes
    request_length: int
    response_length: int
    response_template: bytes = b""

    @property
    def request_data_len(self) -> int:
        return self.request_length - HEADER_SIZE

    @property
    def response_data_len(self) -> int:
        return self.response_length - HEADER_SIZE

    def data_len(self, direction: Direction) -> int:
        if direction is Direction.REQUEST:
            return self.request_data_len
        return self.response_data_len

    def base_data(self, direction: Direction) -> bytes:
        """Template zero-padded to the slot's data-field length."""
        template = self.request_template if direction is Direction.REQUEST else self.response_template
        return template + bytes(self.data_len(direction) - len(template))


@dataclass
class SequenceCase:
    trigger: str
    ordered_changes: List[List[str]]


@dataclass
class PadField:
    slot: int
    offset: int
    width: int
    seed: int


@dataclass
class TwinScenario:
    name: str
    hmi: Endpoint
    plcs: List[PlcSpec]
    components: List[ComponentSpec]
    poll_cycle: List[PollSlot]
    cycle_period_ms: int = 100
    cases: List[SequenceCase] = field(default_factory=list)
    fake_plc_count: int = 0
    pad_field: Optional[PadField] = None
    rng_seed: int = 0
    jitter: bool = False
    # episode timing, in poll cycles
    case_interval_cycles: int = 20
    stage_gap_cycles: int = 2
    first_case_cycle: int = 2

    def plc(self, plc_id: str) -> PlcSpec:
        for p in self.plcs:
            if p.plc_id == plc_id:
                return p
        raise KeyError(plc_id)

    def component(self, name: str) -> ComponentSpec:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def slot_of(self, comp: ComponentSpec) -> int:
        if comp.slot is not None:
            return comp.slot
        for i, slot in enumerate(self.poll_cycle):
            if slot.plc_id == comp.plc_id:
                return i
        raise KeyError(f"no poll slot for PLC {comp.plc_id!r}")

    def case_components(self) -> set:
        names = set()
        for case in self.cases:
            names.add(case.trigger)
            for stage in case.ordered_changes:
                names.update(stage)
        return names


def validate(s: TwinScenario) -> None:
    """Raise ConfigInvalid listing every broken scenario invariant."""
    problems: List[str] = []
    ids = [p.plc_id for p in s.plcs]
    if len(set(ids)) != len(ids):
        problems.append("duplicate plc_id")
    endpoints = [p.endpoint for p in s.plcs] + [s.hmi]
    if len(set(endpoints)) != len(endpoints):
        problems.append("PLC and HMI endpoints must be distinct")
    if not s.poll_cycle:
        problems.append("poll_cycle is empty")
    if s.cycle_period_ms <= 0:
        problems.append("cycle_period_ms must be positive")
    elif s.poll_cycle and s.cycle_period_ms * 1000 // len(s.poll_cycle) < 4:
        problems.append("cycle_period_ms too short for the poll cycle")
    if s.fake_plc_count < 0:
        problems.append("fake_plc_count must be >= 0")
    if s.stage_gap_cycles < 2:
        problems.append("stage_gap_cycles must be >= 2")
    if not 0 <= s.rng_seed < 2 ** 64:
        problems.append("rng_seed must be a 64-bit unsigned integer")

    for i, slot in enumerate(s.poll_cycle):
        if slot.plc_id not in ids:
            problems.append(f"slot {i}: unknown PLC {slot.plc_id!r}")
        for direction in Direction:
            n = slot.data_len(direction)
            template = slot.request_template if direction is Direction.REQUEST else slot.response_template
            if n < 0:
                problems.append(f"slot {i}: {direction.value} length shorter than the header")
            elif len(template) > n:
                problems.append(f"slot {i}: {direction.value} template longer than its data field")

    names = [c.name for c in s.components]
    if len(set(names)) != len(names):
        problems.append("duplicate component name")
    occupied: Dict[Tuple[int, Direction], List[Tuple[int, int, str]]] = {}
    for c in s.components:
        tag = f"component {c.name!r}"
        if c.plc_id not in ids:
            problems.append(f"{tag}: unknown PLC {c.plc_id!r}")
            continue
        try:
            si = s.slot_of(c)
        except KeyError as exc:
            problems.append(f"{tag}: {exc.args[0]}")
            continue
        if not 0 <= si < len(s.poll_cycle):
            problems.append(f"{tag}: slot {si} out of range")
            continue
        slot = s.poll_cycle[si]
        if slot.plc_id != c.plc_id:
            problems.append(f"{tag}: slot {si} belongs to {slot.plc_id!r}")
        if c.width not in (1, 2):
            problems.append(f"{tag}: width must be 1 or 2")
        if c.scale < 1:
            problems.append(f"{tag}: scale must be positive")
        if c.lower > c.upper:
            problems.append(f"{tag}: lower > upper")
        elif c.scale >= 1 and (c.upper - c.lower) % c.scale:
            problems.append(f"{tag}: range not divisible by scale")
        if c.lower < 0 or c.upper >= 256 ** max(c.width, 1):
            problems.append(f"{tag}: bounds do not fit {c.width} byte(s)")
        if c.kind is Kind.TOGGLE and (c.lower, c.upper, c.width) != (0, 1, 1):
            problems.append(f"{tag}: toggles need lower=0, upper=1, width=1")
        v = c.start_value
        if not c.lower <= v <= c.upper or (c.scale >= 1 and (v - c.lower) % c.scale):
            problems.append(f"{tag}: initial value {v} is not a legal value")
        if c.field_offset < 0 or c.field_offset + c.width > slot.data_len(c.direction):
            problems.append(f"{tag}: offset {c.field_offset} does not fit the data field")
        occupied.setdefault((si, c.direction), []).append((c.field_offset, c.width, c.name))

    for spans in occupied.values():
        spans.sort()
        for (o1, w1, n1), (o2, _, n2) in zip(spans, spans[1:]):
            if o1 + w1 > o2:
                problems.append(f"components {n1!r} and {n2!r} overlap")

    known = set(names)
    for k, case in enumerate(s.cases):
        if case.trigger not in known:
            problems.append(f"case {k}: unknown trigger {case.trigger!r}")
        if not case.ordered_changes:
            problems.append(f"case {k}: no stages")
        for stage in case.ordered_changes:
            if not stage:
                problems.append(f"case {k}: empty stage")
            for name in stage:
                if name not in known:
                    problems.append(f"case {k}: unknown component {name!r}")

    pad = s.pad_field
    if pad is not None:
        if not 0 <= pad.slot < len(s.poll_cycle):
            problems.append("pad_field: slot out of range")
        else:
            n = s.poll_cycle[pad.slot].response_data_len
            if pad.width < 1 or pad.offset < 0 or pad.offset + pad.width > n:
                problems.append("pad_field: does not fit the response data field")
            for o, w, name in occupied.get((pad.slot, Direction.RESPONSE), []):
                if o < pad.offset + pad.width and pad.offset < o + w:
                    problems.append(f"pad_field collides with component {name!r}")
    if problems:
        raise ConfigInvalid(problems)


# -- YAML round trip ---------------------------------------------------------

def _plain(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Endpoint):
        return str(value)
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def scenario_to_dict(s: TwinScenario) -> Dict[str, Any]:
    return _plain(s)


def scenario_from_dict(d: Dict[str, Any]) -> TwinScenario:
    try:
        plcs = [PlcSpec(p["plc_id"], Endpoint.parse(p["endpoint"]), Proto(p["proto"]),
                        bool(p.get("fake", False))) for p in d["plcs"]]
        comps = []
        for c in d.get("components", []):
            c = dict(c)
            c["kind"] = Kind(c.get("kind", "Analog"))
            c["endianness"] = Endian(c.get("endianness", "LE"))
            c["direction"] = Direction.parse(c.get("direction", "response"))
            comps.append(ComponentSpec(**c))
        slots = [PollSlot(sl["plc_id"], bytes.fromhex(sl.get("request_template", "")),
                          int(sl["request_length"]), int(sl["response_length"]),
                          bytes.fromhex(sl.get("response_template", "")))
                 for sl in d["poll_cycle"]]
        cases = [SequenceCase(c["trigger"], [list(stage) for stage in c["ordered_changes"]])
                 for c in d.get("cases", [])]
        pad = PadField(**d["pad_field"]) if d.get("pad_field") else None
        extra = {k: d[k] for k in ("cycle_period_ms", "fake_plc_count", "rng_seed", "jitter",
                                   "case_interval_cycles", "stage_gap_cycles", "first_case_cycle")
                 if k in d}
        return TwinScenario(d.get("name", "scenario"), Endpoint.parse(d["hmi"]), plcs, comps,
                            slots, cases=cases, pad_field=pad, **extra)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid([f"malformed scenario: {exc!r}"]) from None


def dump_scenario(s: TwinScenario, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(s), fh, sort_keys=False)


def load_scenario(path: Union[str, os.PathLike]) -> TwinScenario:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigInvalid([f"not valid YAML: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigInvalid(["scenario file must be a mapping"])
    return scenario_from_dict(data)
