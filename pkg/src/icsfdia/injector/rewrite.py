"""Policy-driven rewriting of data fields, offline or in a relay."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..capture import FormatError, Trace, format_line, parse_line
from ..inference.fields import FieldProfile
from ..inference.model import AttackModel
from ..proto import Frame, FrameError, extract_data_field
from .policy import (FixValue, Freeze, InjectionPolicy, PolicyViolation, Ramp,
                     RandomInBounds, resolve_profile)
from .stealth import (OFF_SCALE, OUT_OF_BOUNDS, OUT_OF_SEQUENCE, FieldTracker,
                      Locator)

LOG_HEADER = "ICSINJECT v1"


@dataclass
class LogEntry:
    index: int
    frame: Frame
    orig: bytes
    policies: Tuple[str, ...]


@dataclass
class SkipEntry:
    index: int
    frame: Frame
    policy: str
    reason: str


@dataclass
class InjectionLog:
    entries: List[LogEntry] = field(default_factory=list)
    skipped: List[SkipEntry] = field(default_factory=list)
    # relay only: byte runs forwarded without framing
    decode_errors: int = 0

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class _State:
    policy: InjectionPolicy
    profile: FieldProfile
    rng: random.Random
    frozen: Optional[int] = None
    ramp: Optional[int] = None
    last_genuine: Optional[int] = None


class Rewriter:
    """Applies policies frame by frame. Shared by offline rewriting and the relay.

    Policies apply in list order; a later policy sees the bytes written by an
    earlier one. The sequence test judges changes against what the victim has
    been shown so far, which is tracked from the rewritten output.
    """

    def __init__(self, model: AttackModel, policies: Sequence[InjectionPolicy],
                 seed: Optional[int] = None, strict: bool = False):
        self.model = model
        self.strict = strict
        self.locator = Locator(model)
        self.tracker = FieldTracker(model, self.locator)
        self.log = InjectionLog()
        root = random.Random(seed)
        self._states: List[_State] = []
        for p in policies:
            profile = resolve_profile(model, p)
            s = p.strategy
            rng = random.Random(s.seed if isinstance(s, RandomInBounds) and s.seed is not None
                                else root.getrandbits(64))
            self._states.append(_State(p, profile, rng))

    def _propose(self, st: _State, genuine: int, shown: Optional[int], permitted: bool) -> int:
        s = st.policy.strategy
        prof = st.profile
        if isinstance(s, FixValue):
            return s.value
        if isinstance(s, Freeze):
            if st.frozen is None:
                st.frozen = genuine
            return st.frozen
        if isinstance(s, Ramp):
            st.ramp = genuine if st.ramp is None else st.ramp + s.step
            return st.ramp
        quiet = genuine == st.last_genuine
        st.last_genuine = genuine
        # under the sequence guard, redraw only when the genuine value moves
        if st.policy.stealth.respect_sequence and shown is not None and (quiet or not permitted):
            return shown
        if st.policy.stealth.respect_scale:
            steps = (prof.upper - prof.lower) // prof.scale
            return prof.lower + prof.scale * st.rng.randint(0, steps)
        return st.rng.randint(prof.lower, prof.upper)

    def _problems(self, st: _State, value: int, shown: Optional[int], permitted: bool) -> List[str]:
        prof, flags = st.profile, st.policy.stealth
        out = []
        if not 0 <= value < 256 ** prof.width:
            out.append(f"value {value} does not fit {prof.width} byte(s)")
        if flags.respect_bounds and not prof.lower <= value <= prof.upper:
            out.append(f"{OUT_OF_BOUNDS} value {value} outside {prof.lower}..{prof.upper}")
        if flags.respect_scale and (value - prof.lower) % prof.scale:
            out.append(f"{OFF_SCALE} value {value} not on scale {prof.scale}")
        if flags.respect_sequence and shown is not None and value != shown and not permitted:
            out.append(f"{OUT_OF_SEQUENCE} change to {value} before its predecessors")
        return out

    def _settle(self, states, profiles, data: bytearray, frame: Frame, index: int) -> None:
        # a predecessor held back by a later policy can strand an earlier change
        guarded = [st for st in states if st.policy.stealth.respect_sequence]
        while True:
            pending = self.tracker.pending(profiles, bytes(data))
            stranded = [st for st in guarded if st.profile.ref in pending
                        and not self.tracker.permitted(st.profile.ref, frame.ts_us, pending)]
            if not stranded:
                return
            for st in stranded:
                prof = st.profile
                reason = f"{OUT_OF_SEQUENCE} once all policies applied"
                if self.strict:
                    raise PolicyViolation(f"frame {index} policy {st.policy.label}: {reason}")
                self.log.skipped.append(SkipEntry(index, frame, st.policy.label, reason))
                data[prof.offset:prof.offset + prof.width] = prof.encode(self.tracker.values[prof.ref])

    def process(self, frame: Frame, index: int) -> Frame:
        group = self.locator.group_of(frame)
        states = [st for st in self._states
                  if group is not None and st.profile.ref.group == group and st.policy.active(frame.ts_us)]
        if not states:
            self.tracker.update(frame, group)
            return frame
        try:
            data = bytearray(extract_data_field(frame))
        except FrameError:
            self.tracker.update(frame, group)
            return frame
        profiles = self.locator.profiles(group)
        for st in states:
            prof = st.profile
            genuine = prof.read(data)
            shown = self.tracker.values.get(prof.ref)
            pending = self.tracker.pending(profiles, bytes(data))
            permitted = self.tracker.permitted(prof.ref, frame.ts_us, pending)
            value = self._propose(st, genuine, shown, permitted)
            problems = self._problems(st, value, shown, permitted)
            if problems:
                reason = "; ".join(problems)
                if self.strict:
                    raise PolicyViolation(f"frame {index} policy {st.policy.label}: {reason}")
                self.log.skipped.append(SkipEntry(index, frame, st.policy.label, reason))
                value = genuine
                # passing the genuine change through would itself be out of order
                if (st.policy.stealth.respect_sequence and shown is not None
                        and genuine != shown and not permitted):
                    value = shown
            data[prof.offset:prof.offset + prof.width] = prof.encode(value)
        self._settle(states, profiles, data, frame, index)
        original = extract_data_field(frame)
        applied = [st.policy.label for st in states if st.profile.read(data) != st.profile.read(original)]
        out = frame
        if bytes(data) != original:
            out = Frame(frame.ts_us, frame.src, frame.dst, frame.proto,
                        frame.raw[:len(frame.raw) - len(data)] + bytes(data), frame.direction)
            self.log.entries.append(LogEntry(index, out, frame.raw, tuple(applied)))
        self.tracker.update(out, group, bytes(data))
        return out


def rewrite_trace(trace: Trace, model: AttackModel, policies: Sequence[InjectionPolicy],
                  seed: Optional[int] = None, strict: bool = False) -> Tuple[Trace, InjectionLog]:
    """Rewrite a recorded trace. Frame count and order are kept."""
    rw = Rewriter(model, policies, seed, strict)
    frames = [rw.process(f, i) for i, f in enumerate(trace.frames)]
    return Trace(frames, trace.meta), rw.log


def restore_trace(trace: Trace, log: InjectionLog) -> Trace:
    """Undo a rewrite using its log."""
    frames = list(trace.frames)
    for e in log.entries:
        if frames[e.index].raw != e.frame.raw:
            raise ValueError(f"frame {e.index} does not match the logged rewrite")
        f = frames[e.index]
        frames[e.index] = Frame(f.ts_us, f.src, f.dst, f.proto, e.orig, f.direction)
    return Trace(frames, trace.meta)


# -- log file -----------------------------------------------------------------

def _token(text: str) -> str:
    return "_".join(text.split()) or "-"


def dumps_log(log: InjectionLog) -> str:
    rows = [(e.index, format_line(e.frame) + f"\torig={e.orig.hex()} new={e.frame.raw.hex()} "
                                             f"policy={','.join(_token(x) for x in e.policies)} index={e.index}")
            for e in log.entries]
    rows += [(s.index, format_line(s.frame) + f"\tskipped=1 policy={_token(s.policy)} index={s.index} "
                                              f"reason={s.reason.replace(chr(9), ' ')}")
             for s in log.skipped]
    rows.sort(key=lambda r: r[0])
    lines = [LOG_HEADER, f"# decode_errors={log.decode_errors}"] + [r[1] for r in rows]
    return "\n".join(lines) + "\n"


def save_log(log: InjectionLog, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_log(log))


def _annotation(text: str) -> Dict[str, str]:
    head, _, reason = text.partition(" reason=")
    out = dict(tok.split("=", 1) for tok in head.split())
    if reason:
        out["reason"] = reason
    return out


def loads_log(text: str) -> InjectionLog:
    lines = text.splitlines()
    if not lines:
        raise FormatError(1, "empty log")
    if lines[0] != LOG_HEADER:
        raise FormatError(1, f"expected {LOG_HEADER!r}")
    log = InjectionLog()
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("# decode_errors="):
            log.decode_errors = int(line.split("=", 1)[1])
            continue
        if not line or line.startswith("#"):
            continue
        frame, extra = parse_line(line, lineno, columns=6)
        try:
            ann = _annotation(extra[0])
            index = int(ann["index"])
            if "skipped" in ann:
                log.skipped.append(SkipEntry(index, frame, ann["policy"], ann.get("reason", "")))
            else:
                policies = tuple(ann["policy"].split(",")) if ann["policy"] else ()
                log.entries.append(LogEntry(index, frame, bytes.fromhex(ann["orig"]), policies))
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(lineno, f"bad annotation: {exc}") from None
    return log


def load_log(path: Union[str, os.PathLike]) -> InjectionLog:
    with open(path) as fh:
        return loads_log(fh.read())


def log_path_for(trace_path: Union[str, os.PathLike]) -> str:
    root, _ = os.path.splitext(os.fspath(trace_path))
    return root + ".injlog"
