"""Checking frames against a learned model, as a cautious operator would."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from ..capture import FlowKey, Trace
from ..inference.fields import FieldProfile, FieldRef, GroupRef
from ..inference.model import AttackModel
from ..proto import Endpoint, Frame, FrameError, Proto, extract_data_field


class UnknownFlow(LookupError):
    pass


OUT_OF_BOUNDS = "out-of-bounds"
OFF_SCALE = "off-scale"
OUT_OF_SEQUENCE = "out-of-sequence"
WRONG_LENGTH = "wrong-length"
UNDECODABLE = "undecodable"
UNKNOWN_FLOW = "unknown-flow"


@dataclass(frozen=True)
class Violation:
    kind: str
    ref: Optional[FieldRef] = None
    value: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        where = f" {self.ref}" if self.ref is not None else ""
        what = f" value={self.value}" if self.value is not None else ""
        tail = f" ({self.detail})" if self.detail else ""
        return f"{self.kind}{where}{what}{tail}"


@dataclass
class Verdict:
    ts_us: int
    index: Optional[int] = None
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class Locator:
    """Maps frames onto the model's flows and length groups."""

    def __init__(self, model: AttackModel):
        self.model = model
        self._flows: Dict[Tuple[Endpoint, Endpoint, Proto], Tuple[FlowKey, object]] = {}
        for fm in model.flows:
            k = fm.key
            self._flows[k.hmi, k.plc, k.proto] = (k, k.direction_of(
                Frame(0, k.hmi, k.plc, k.proto, b"")))
            self._flows[k.plc, k.hmi, k.proto] = (k, k.direction_of(
                Frame(0, k.plc, k.hmi, k.proto, b"")))
        self._profiles: Dict[GroupRef, List[FieldProfile]] = {}
        for p in model.profiles:
            self._profiles.setdefault(p.ref.group, []).append(p)
        self._groups = {g.ref for fm in model.flows for g in fm.groups}

    def group_of(self, frame: Frame) -> Optional[GroupRef]:
        hit = self._flows.get((frame.src, frame.dst, frame.proto))
        if hit is None:
            return None
        key, direction = hit
        return GroupRef(key, direction, frame.len)

    def known_group(self, group: GroupRef) -> bool:
        return group in self._groups

    def profiles(self, group: GroupRef) -> List[FieldProfile]:
        return self._profiles.get(group, [])


class FieldTracker:
    """Last value and last change time of every modeled field, as the victim sees it."""

    def __init__(self, model: AttackModel, locator: Optional[Locator] = None):
        self.model = model
        self.locator = locator or Locator(model)
        self.values: Dict[FieldRef, int] = {}
        self.changed_at: Dict[FieldRef, int] = {}
        self._preds: Dict[FieldRef, List[FieldRef]] = {}
        for e in model.sequence.edges:
            self._preds.setdefault(e.later, []).append(e.earlier)

    def predecessors(self, ref: FieldRef) -> List[FieldRef]:
        return self._preds.get(ref, [])

    def pending(self, profiles: Iterable[FieldProfile], data: bytes) -> Dict[FieldRef, int]:
        """Fields of ``data`` whose value differs from the last one seen."""
        out = {}
        for p in profiles:
            v = p.read(data)
            if p.ref in self.values and self.values[p.ref] != v:
                out[p.ref] = v
        return out

    def permitted(self, ref: FieldRef, ts_us: int, pending: Optional[Dict[FieldRef, int]] = None) -> bool:
        """True if every predecessor of ``ref`` has changed since ``ref`` last changed.

        Predecessors changing in the frame being judged (``pending``) count as
        having changed at ``ts_us``.
        """
        pending = pending or {}
        own = self.changed_at.get(ref)
        for pred in self.predecessors(ref):
            when = ts_us if pred in pending else self.changed_at.get(pred)
            if when is None or (own is not None and when <= own):
                return False
        return True

    def update(self, frame: Frame, group: Optional[GroupRef] = None, data: Optional[bytes] = None) -> None:
        group = group or self.locator.group_of(frame)
        if group is None:
            return
        profiles = self.locator.profiles(group)
        if not profiles:
            return
        if data is None:
            try:
                data = extract_data_field(frame)
            except FrameError:
                return
        for p in profiles:
            v = p.read(data)
            old = self.values.get(p.ref)
            if old is not None and old != v:
                self.changed_at[p.ref] = frame.ts_us
            self.values[p.ref] = v


def judge_value(profile: FieldProfile, value: int) -> List[Violation]:
    out = []
    if not profile.lower <= value <= profile.upper:
        out.append(Violation(OUT_OF_BOUNDS, profile.ref, value,
                             f"bounds {profile.lower}..{profile.upper}"))
    if (value - profile.lower) % profile.scale:
        out.append(Violation(OFF_SCALE, profile.ref, value, f"scale {profile.scale}"))
    return out


class StealthMonitor:
    """Stateful checker: carries field history across frames for the sequence test."""

    def __init__(self, model: AttackModel):
        self.model = model
        self.locator = Locator(model)
        self.tracker = FieldTracker(model, self.locator)

    def check(self, frame: Frame, index: Optional[int] = None) -> Verdict:
        verdict = Verdict(frame.ts_us, index)
        group = self.locator.group_of(frame)
        if group is None:
            raise UnknownFlow(f"{frame.src}>{frame.dst}/{frame.proto.value} is not a modeled flow")
        if not self.locator.known_group(group):
            verdict.violations.append(Violation(WRONG_LENGTH, detail=f"length {frame.len} unseen for {group.flow}"))
            return verdict
        try:
            data = extract_data_field(frame)
        except FrameError as exc:
            verdict.violations.append(Violation(UNDECODABLE, detail=str(exc)))
            return verdict
        profiles = self.locator.profiles(group)
        pending = self.tracker.pending(profiles, data)
        for p in profiles:
            v = p.read(data)
            verdict.violations.extend(judge_value(p, v))
            if p.ref in pending and not self.tracker.permitted(p.ref, frame.ts_us, pending):
                verdict.violations.append(Violation(OUT_OF_SEQUENCE, p.ref, v, "predecessors did not change first"))
        self.tracker.update(frame, group, data)
        return verdict


def stealth_check(frame: Frame, model: AttackModel, monitor: Optional[StealthMonitor] = None) -> Verdict:
    """Check one frame. Without a ``monitor`` there is no history, so no sequence test."""
    return (monitor or StealthMonitor(model)).check(frame)


def check_trace(trace: Trace, model: AttackModel) -> List[Verdict]:
    """Verdicts for every frame with a violation. Non-application frames are skipped."""
    monitor = StealthMonitor(model)
    bad = []
    for i, frame in enumerate(trace.frames):
        if frame.proto is Proto.OTHER:
            continue
        try:
            verdict = monitor.check(frame, i)
        except UnknownFlow as exc:
            verdict = Verdict(frame.ts_us, i, [Violation(UNKNOWN_FLOW, detail=str(exc))])
        if not verdict.ok:
            bad.append(verdict)
    return bad
