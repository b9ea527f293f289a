"""Length grouping, byte-column diffing and field profiling."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import gcd
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from ..capture import Flow, FlowKey
from ..proto import Direction, Frame, extract_data_field


class GroupTooSmall(ValueError):
    pass


class FieldKind(enum.Enum):
    TOGGLE = "Toggle"
    ANALOG = "Analog"
    CONSTANT = "Constant"


@dataclass(frozen=True)
class GroupRef:
    flow: FlowKey
    direction: Direction
    length: int

    def __str__(self) -> str:
        return f"{self.flow}/{self.direction.value}/{self.length}"

    @classmethod
    def parse(cls, text: str) -> "GroupRef":
        flow, direction, length = text.rsplit("/", 2)
        return cls(FlowKey.parse(flow), Direction.parse(direction), int(length))


@dataclass(frozen=True)
class FieldRef:
    group: GroupRef
    offset: int
    width: int

    def __str__(self) -> str:
        return f"{self.group}@{self.offset}+{self.width}"

    @classmethod
    def parse(cls, text: str) -> "FieldRef":
        group, _, span = text.rpartition("@")
        offset, _, width = span.partition("+")
        return cls(GroupRef.parse(group), int(offset), int(width))


@dataclass
class LengthGroup:
    ref: GroupRef
    size: int
    members: List[Frame] = field(default_factory=list, repr=False, compare=False)

    @property
    def direction(self) -> Direction:
        return self.ref.direction

    @property
    def length(self) -> int:
        return self.ref.length


@dataclass
class FieldDiff:
    group: GroupRef
    changed_offsets: List[int]
    static_mask: bytes
    # data field of the first member, for reports
    sample: bytes = b""


@dataclass
class FieldProfile:
    ref: FieldRef
    observed: FrozenSet[int]
    lower: int
    upper: int
    scale: int
    kind: FieldKind
    endianness: str = "LE"
    # same statistics under the opposite byte order
    alt_lower: int = 0
    alt_upper: int = 0
    alt_scale: int = 1
    changes: int = 0
    samples: int = 0
    # (ts_us, value) per group member, in trace order
    timeline: List[Tuple[int, int]] = field(default_factory=list, repr=False, compare=False)

    @property
    def offset(self) -> int:
        return self.ref.offset

    @property
    def width(self) -> int:
        return self.ref.width

    @property
    def byteorder(self) -> str:
        return "little" if self.endianness == "LE" else "big"

    def read(self, data: bytes) -> int:
        return int.from_bytes(data[self.offset:self.offset + self.width], self.byteorder)

    def encode(self, value: int) -> bytes:
        return value.to_bytes(self.width, self.byteorder)

    def hex(self, value: int) -> str:
        return self.encode(value).hex()

    def legal(self, value: int) -> bool:
        return self.lower <= value <= self.upper and (value - self.lower) % self.scale == 0

    @property
    def change_rate(self) -> float:
        return self.changes / max(self.samples - 1, 1)


def group_by_length(flow: Flow) -> List[LengthGroup]:
    buckets: Dict[Tuple[Direction, int], List[Frame]] = {}
    for frame in flow.frames:
        buckets.setdefault((frame.direction, frame.len), []).append(frame)
    order = {Direction.REQUEST: 0, Direction.RESPONSE: 1}
    keys = sorted(buckets, key=lambda k: (-k[1], order[k[0]]))
    return [LengthGroup(GroupRef(flow.key, d, n), len(buckets[d, n]), buckets[d, n]) for d, n in keys]


def data_matrix(frames: Sequence[Frame]) -> np.ndarray:
    datas = [extract_data_field(f) for f in frames]
    width = len(datas[0]) if datas else 0
    return np.frombuffer(b"".join(datas), dtype=np.uint8).reshape(len(datas), width)


def find_changed_fields(group: LengthGroup, matrix: Optional[np.ndarray] = None) -> FieldDiff:
    if len(group.members) < 2:
        raise GroupTooSmall(f"group {group.ref} has {len(group.members)} member(s)")
    mat = data_matrix(group.members) if matrix is None else matrix
    changed = (mat != mat[0]).any(axis=0)
    offsets = [int(i) for i in np.flatnonzero(changed)]
    mask = bytes((~changed).astype(np.uint8))
    return FieldDiff(group.ref, offsets, mask, mat[0].tobytes())


def split_fields(changed_offsets: Sequence[int], co_change: np.ndarray,
                 width_cap: Optional[int] = 2) -> List[Tuple[int, int]]:
    """Cut changed byte offsets into (offset, width) fields.

    Adjacent changed bytes join one field only when they change together in
    at least one transition (``co_change[i]`` refers to bytes i and i+1).
    Joined runs are then cut into pieces no wider than ``width_cap``.
    """
    runs: List[List[int]] = []
    for off in changed_offsets:
        if runs and runs[-1][-1] == off - 1 and co_change[off - 1]:
            runs[-1].append(off)
        else:
            runs.append([off])
    fields: List[Tuple[int, int]] = []
    for run in runs:
        cap = width_cap or len(run)
        for start in range(0, len(run), cap):
            piece = run[start:start + cap]
            fields.append((piece[0], len(piece)))
    return fields


def value_stats(values) -> Tuple[int, int, int]:
    """(lower, upper, scale) where scale is the gcd of all pairwise differences."""
    observed = set(values)
    lower, upper = min(observed), max(observed)
    scale = 0
    for v in observed:
        scale = gcd(scale, v - lower)
    return lower, upper, scale or 1


def _kind(observed) -> FieldKind:
    if len(observed) == 1:
        return FieldKind.CONSTANT
    if observed <= {0, 1}:
        return FieldKind.TOGGLE
    return FieldKind.ANALOG


def _column_values(mat: np.ndarray, offset: int, width: int, byteorder: str) -> List[int]:
    if width > 7:
        return [int.from_bytes(row.tobytes(), byteorder) for row in mat[:, offset:offset + width]]
    cols = mat[:, offset:offset + width].astype(np.int64)
    weights = [256 ** k for k in range(width)]
    if byteorder == "big":
        weights.reverse()
    return [int(v) for v in cols @ np.array(weights, dtype=np.int64)]


def profile_fields(group: LengthGroup, diff: FieldDiff, width_cap: Optional[int] = 2,
                   endianness: str = "LE", matrix: Optional[np.ndarray] = None) -> List[FieldProfile]:
    if diff.group != group.ref:
        raise ValueError("diff does not belong to this group")
    if not diff.changed_offsets:
        return []
    mat = data_matrix(group.members) if matrix is None else matrix
    moved = mat[1:] != mat[:-1]
    co_change = (moved[:, :-1] & moved[:, 1:]).any(axis=0) if mat.shape[1] > 1 else np.zeros(0, bool)
    stamps = [f.ts_us for f in group.members]
    primary = "little" if endianness == "LE" else "big"
    other = "big" if primary == "little" else "little"
    profiles = []
    for offset, width in split_fields(diff.changed_offsets, co_change, width_cap):
        values = _column_values(mat, offset, width, primary)
        alt = _column_values(mat, offset, width, other)
        observed = frozenset(values)
        lower, upper, scale = value_stats(observed)
        alt_lower, alt_upper, alt_scale = value_stats(alt)
        changes = sum(1 for a, b in zip(values, values[1:]) if a != b)
        profiles.append(FieldProfile(
            FieldRef(group.ref, offset, width), observed, lower, upper, scale, _kind(observed),
            endianness, alt_lower, alt_upper, alt_scale, changes, len(values),
            list(zip(stamps, values))))
    return profiles
