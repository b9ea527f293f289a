"""Attack model assembly, complexity accounting and the ``model v1`` file format."""

from __future__ import annotations

import dataclasses
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

from ..capture import Flow, FlowKey, Trace, classify
from ..proto import Direction, FrameError, extract_data_field
from .fields import (FieldDiff, FieldKind, FieldProfile, FieldRef, GroupRef, LengthGroup,
                     data_matrix, find_changed_fields, group_by_length, profile_fields)
from .schedule import NoPeriodFound, PeriodicSchedule, sort_periodic
from .sequence import Edge, Pattern, SequenceRelation, mine_sequence

MODEL_MAGIC = "model v1"


class ModelFormatError(ValueError):
    pass


@dataclass
class Thresholds:
    coverage_threshold: float = 0.95
    max_period: int = 64
    # 0 lifts the cap
    width_cap: int = 2
    endianness: str = "LE"
    min_group: int = 2
    min_support: int = 3
    consistency_threshold: float = 0.9
    max_change_rate: float = 0.5
    episode_gap_cycles: float = 4.0


@dataclass
class ComplexityReport:
    n_ips: int = 0
    n_flows: int = 0
    lengths_per_flow: Dict[str, int] = field(default_factory=dict)
    fields_per_group: Dict[str, int] = field(default_factory=dict)
    outer_iterations: int = 0
    middle_iterations: int = 0
    inner_iterations: int = 0

    def rows(self) -> List[tuple]:
        rows = [("n_ips", self.n_ips), ("n_flows", self.n_flows),
                ("outer_iterations", self.outer_iterations),
                ("middle_iterations", self.middle_iterations),
                ("inner_iterations", self.inner_iterations)]
        rows += [(f"lengths[{k}]", v) for k, v in self.lengths_per_flow.items()]
        rows += [(f"fields[{k}]", v) for k, v in self.fields_per_group.items()]
        return rows


@dataclass
class FlowModel:
    key: FlowKey
    schedule: Optional[PeriodicSchedule] = None
    groups: List[LengthGroup] = field(default_factory=list)
    diffs: List[FieldDiff] = field(default_factory=list)
    profiles: List[FieldProfile] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    def lengths(self, direction: Direction) -> List[int]:
        return [g.length for g in self.groups if g.direction is direction]


@dataclass
class AttackModel:
    flows: List[FlowModel] = field(default_factory=list)
    sequence: SequenceRelation = field(default_factory=SequenceRelation)
    thresholds: Thresholds = field(default_factory=Thresholds)
    complexity: ComplexityReport = field(default_factory=ComplexityReport)
    ignored: int = 0

    @property
    def profiles(self) -> List[FieldProfile]:
        return [p for f in self.flows for p in f.profiles]

    @property
    def changeable(self) -> List[FieldProfile]:
        return [p for p in self.profiles if p.kind is not FieldKind.CONSTANT]

    def flow(self, key: FlowKey) -> Optional[FlowModel]:
        for f in self.flows:
            if f.key == key:
                return f
        return None

    def profile(self, ref: FieldRef) -> Optional[FieldProfile]:
        for p in self.profiles:
            if p.ref == ref:
                return p
        return None

    def group_profiles(self, group: GroupRef) -> List[FieldProfile]:
        return [p for p in self.profiles if p.ref.group == group]


def build_attack_model(trace: Trace, thresholds: Optional[Thresholds] = None) -> AttackModel:
    """Run the inference loop: per PLC address, per length group, per changed field."""
    th = thresholds or Thresholds()
    flows = classify(trace)
    model = AttackModel(thresholds=th, ignored=flows.ignored)
    cx = model.complexity

    by_ip: "OrderedDict[str, List[Flow]]" = OrderedDict()
    for flow in flows:
        by_ip.setdefault(flow.key.plc.addr, []).append(flow)

    for ip, ip_flows in by_ip.items():
        cx.outer_iterations += 1
        for flow in ip_flows:
            fm = FlowModel(flow.key)
            model.flows.append(fm)
            try:
                fm.schedule = sort_periodic(flow, th.coverage_threshold, th.max_period)
            except NoPeriodFound as exc:
                fm.errors.append(f"schedule: {exc}")
            fm.groups = group_by_length(flow)
            cx.lengths_per_flow[str(flow.key)] = len(fm.groups)
            for group in fm.groups:
                cx.middle_iterations += 1
                usable = []
                for frame in group.members:
                    try:
                        extract_data_field(frame)
                        usable.append(frame)
                    except FrameError:
                        pass
                if len(usable) != len(group.members):
                    fm.errors.append(f"{group.ref}: {len(group.members) - len(usable)} undecodable frame(s)")
                    group = dataclasses.replace(group, members=usable)
                if len(usable) < th.min_group:
                    continue
                matrix = data_matrix(usable)
                diff = find_changed_fields(group, matrix)
                fm.diffs.append(diff)
                profiles = profile_fields(group, diff, th.width_cap or None, th.endianness, matrix)
                cx.fields_per_group[str(group.ref)] = len(profiles)
                for profile in profiles:
                    cx.inner_iterations += 1
                    fm.profiles.append(profile)
    cx.n_ips = len(by_ip)
    cx.n_flows = len(model.flows)

    cycle = max((f.schedule.cycle_us for f in model.flows if f.schedule), default=0)
    model.sequence = mine_sequence(flows, model.profiles, th.min_support,
                                   th.consistency_threshold, th.max_change_rate,
                                   tie_window_us=cycle, episode_gap_cycles=th.episode_gap_cycles)
    return model


def estimate_complexity(trace: Trace, thresholds: Optional[Thresholds] = None) -> ComplexityReport:
    return build_attack_model(trace, thresholds).complexity


# -- serialization -----------------------------------------------------------

def _kv(items: Dict[str, object]) -> str:
    return " ".join(f"{k}={v}" for k, v in items.items())


def _ints(values: Sequence[int]) -> str:
    return ",".join(str(v) for v in values) or "-"


def _hexes(profile: FieldProfile, values) -> str:
    return ",".join(profile.hex(v) for v in sorted(values)) or "-"


def dumps_model(model: AttackModel) -> str:
    th = model.thresholds
    lines = [MODEL_MAGIC, "thresholds " + _kv(dataclasses.asdict(th)), f"ignored {model.ignored}"]
    for fm in model.flows:
        lines.append(f"flow {fm.key}")
        s = fm.schedule
        if s is not None:
            lines.append("  schedule " + _kv({
                "period": s.period, "coverage": f"{s.coverage:.6f}", "cycle_us": s.cycle_us,
                "requests": _ints(s.request_lengths), "responses": _ints(s.response_lengths)}))
        diffs = {d.group: d for d in fm.diffs}
        for g in fm.groups:
            d = diffs.get(g.ref)
            parts = {"size": g.size}
            if d is not None:
                parts["changed"] = _ints(d.changed_offsets)
                parts["sample"] = d.sample.hex() or "-"
            lines.append(f"  group {g.direction.value} {g.length} " + _kv(parts))
        for p in fm.profiles:
            lines.append(f"  field {p.ref.group.direction.value} {p.ref.group.length} {p.offset} {p.width} " + _kv({
                "kind": p.kind.value, "endian": p.endianness,
                "lower": p.hex(p.lower), "upper": p.hex(p.upper), "scale": p.scale,
                "alt_lower": p.alt_lower, "alt_upper": p.alt_upper, "alt_scale": p.alt_scale,
                "changes": p.changes, "samples": p.samples, "observed": _hexes(p, p.observed)}))
        for err in fm.errors:
            lines.append(f"  error {err}")
    seq = model.sequence
    lines.append("sequence " + _kv({"episodes": seq.episodes, "tie_us": seq.tie_window_us,
                                    "gap_us": seq.episode_gap_us}))
    for e in seq.edges:
        lines.append(f"edge {e.earlier} {e.later} support={e.support} consistency={e.consistency:.6f}")
    for pat in seq.patterns:
        stages = ";".join(",".join(str(r) for r in stage) for stage in pat.stages)
        lines.append(f"pattern support={pat.support} stages={stages}")
    cx = model.complexity
    lines.append("complexity " + _kv({"n_ips": cx.n_ips, "n_flows": cx.n_flows,
                                      "outer": cx.outer_iterations, "middle": cx.middle_iterations,
                                      "inner": cx.inner_iterations}))
    for k, v in cx.lengths_per_flow.items():
        lines.append(f"lengths {k} {v}")
    for k, v in cx.fields_per_group.items():
        lines.append(f"fields {k} {v}")
    return "\n".join(lines) + "\n"


def _parse_kv(tokens: Sequence[str]) -> Dict[str, str]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep:
            raise ModelFormatError(f"expected key=value, got {tok!r}")
        out[k] = v
    return out


def _split_ints(text: str) -> List[int]:
    return [] if text == "-" else [int(v) for v in text.split(",")]


def loads_model(text: str) -> AttackModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise ModelFormatError(f"missing '{MODEL_MAGIC}' header")
    model = AttackModel()
    fm: Optional[FlowModel] = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        head, rest = tokens[0], tokens[1:]
        try:
            if head == "thresholds":
                kv = _parse_kv(rest)
                defaults = Thresholds()
                model.thresholds = Thresholds(**{
                    f.name: type(getattr(defaults, f.name))(kv[f.name]) if f.name in kv else getattr(defaults, f.name)
                    for f in dataclasses.fields(Thresholds)})
            elif head == "ignored":
                model.ignored = int(rest[0])
            elif head == "flow":
                fm = FlowModel(FlowKey.parse(rest[0]))
                model.flows.append(fm)
            elif head == "schedule":
                kv = _parse_kv(rest)
                fm.schedule = PeriodicSchedule(fm.key, int(kv["period"]), _split_ints(kv["requests"]),
                                               _split_ints(kv["responses"]), float(kv["coverage"]),
                                               int(kv["cycle_us"]))
            elif head == "group":
                ref = GroupRef(fm.key, Direction.parse(rest[0]), int(rest[1]))
                kv = _parse_kv(rest[2:])
                fm.groups.append(LengthGroup(ref, int(kv["size"])))
                if "changed" in kv:
                    changed = _split_ints(kv["changed"])
                    sample = b"" if kv["sample"] == "-" else bytes.fromhex(kv["sample"])
                    mask = bytes(0 if i in changed else 1 for i in range(len(sample)))
                    fm.diffs.append(FieldDiff(ref, changed, mask, sample))
            elif head == "field":
                group = GroupRef(fm.key, Direction.parse(rest[0]), int(rest[1]))
                ref = FieldRef(group, int(rest[2]), int(rest[3]))
                kv = _parse_kv(rest[4:])
                order = "little" if kv["endian"] == "LE" else "big"
                num = lambda h: int.from_bytes(bytes.fromhex(h), order)  # noqa: E731
                observed = frozenset() if kv["observed"] == "-" else frozenset(num(h) for h in kv["observed"].split(","))
                fm.profiles.append(FieldProfile(
                    ref, observed, num(kv["lower"]), num(kv["upper"]), int(kv["scale"]),
                    FieldKind(kv["kind"]), kv["endian"], int(kv["alt_lower"]), int(kv["alt_upper"]),
                    int(kv["alt_scale"]), int(kv["changes"]), int(kv["samples"])))
            elif head == "error":
                fm.errors.append(line.split("error ", 1)[1])
            elif head == "sequence":
                kv = _parse_kv(rest)
                model.sequence = SequenceRelation(episodes=int(kv["episodes"]),
                                                  tie_window_us=int(kv["tie_us"]),
                                                  episode_gap_us=int(kv["gap_us"]))
            elif head == "edge":
                kv = _parse_kv(rest[2:])
                model.sequence.edges.append(Edge(FieldRef.parse(rest[0]), FieldRef.parse(rest[1]),
                                                 int(kv["support"]), float(kv["consistency"])))
            elif head == "pattern":
                kv = _parse_kv(rest)
                stages = [[FieldRef.parse(r) for r in st.split(",")] for st in kv["stages"].split(";")]
                refs = tuple(sorted((r for st in stages for r in st), key=str))
                model.sequence.patterns.append(Pattern(refs, int(kv["support"]), stages))
            elif head == "complexity":
                kv = _parse_kv(rest)
                cx = model.complexity
                cx.n_ips, cx.n_flows = int(kv["n_ips"]), int(kv["n_flows"])
                cx.outer_iterations, cx.middle_iterations = int(kv["outer"]), int(kv["middle"])
                cx.inner_iterations = int(kv["inner"])
            elif head == "lengths":
                model.complexity.lengths_per_flow[rest[0]] = int(rest[1])
            elif head == "fields":
                model.complexity.fields_per_group[rest[0]] = int(rest[1])
            else:
                raise ModelFormatError(f"unknown record {head!r}")
        except ModelFormatError as exc:
            raise ModelFormatError(f"line {lineno}: {exc}") from None
        except (AttributeError, IndexError, KeyError, ValueError) as exc:
            raise ModelFormatError(f"line {lineno}: {exc!r}") from None
    return model


def save_model(model: AttackModel, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_model(model))


def load_model(path: Union[str, os.PathLike]) -> AttackModel:
    with open(path) as fh:
        return loads_model(fh.read())
