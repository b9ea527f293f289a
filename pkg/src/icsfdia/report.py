"""Human-readable model report and comparison against twin ground truth."""

from __future__ import annotations

import json

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .inference.fields import FieldProfile
from .inference.model import AttackModel, ComplexityReport
from .twin.sim import GroundTruth, TruthField

Key = Tuple[str, str, str, int, int, int]


def highlight(data: bytes, changed: Sequence[int], context: int = 2) -> str:
    """Hex dump with changed bytes in brackets and long static stretches elided.

    ``context`` static bytes are kept on each side of a changed run.
    """
    changed = set(changed)
    if not changed:
        return data[:8].hex() + ("..." if len(data) > 8 else "")
    keep = set()
    for off in changed:
        keep.update(range(off - context, off + context + 1))
    out = []
    i = 0
    while i < len(data):
        if i in changed:
            j = i
            while j < len(data) and j in changed:
                j += 1
            out.append("[" + data[i:j].hex() + "]")
            i = j
        elif i in keep:
            out.append(data[i:i + 1].hex())
            i += 1
        else:
            while i < len(data) and i not in keep and i not in changed:
                i += 1
            out.append("...")
    return "".join(out)


def _bounds(p: FieldProfile) -> str:
    return f"{p.hex(p.lower)}-{p.hex(p.upper)}"


def format_report(model: AttackModel) -> str:
    lines = []
    total = len(model.changeable)
    lines.append(f"changeable fields: {total}")
    for fm in model.flows:
        lines.append("")
        lines.append(f"flow {fm.key}")
        if fm.schedule is not None:
            s = fm.schedule
            lines.append(f"  period {s.period}  requests {','.join(map(str, s.request_lengths))}"
                         f"  responses {','.join(map(str, s.response_lengths))}  coverage {s.coverage:.3f}")
        for err in fm.errors:
            lines.append(f"  error: {err}")
        diffs = {d.group: d for d in fm.diffs}
        for g in fm.groups:
            profiles = [p for p in fm.profiles if p.ref.group == g.ref and p.kind.value != "Constant"]
            diff = diffs.get(g.ref)
            lines.append(f"  {g.direction.value:<8} len {g.length:<5} frames {g.size:<6} fields {len(profiles)}")
            if diff is None or not profiles:
                continue
            lines.append(f"    data {highlight(diff.sample, diff.changed_offsets)}")
            lines.append(f"    {'offset':>6} {'width':>5} {'kind':<8} {'bounds (wire hex)':<20} {'lower':>7} {'upper':>7} {'scale':>5}")
            for p in profiles:
                lines.append(f"    {p.offset:>6} {p.width:>5} {p.kind.value:<8} {_bounds(p):<20} "
                             f"{p.lower:>7} {p.upper:>7} {p.scale:>5}")
    seq = model.sequence
    if seq.patterns:
        lines.append("")
        lines.append(f"sequence patterns ({seq.episodes} episodes)")
        for pat in seq.patterns:
            stages = " -> ".join("{" + ", ".join(f"{r.group.length}@{r.offset}" for r in st) + "}"
                                 for st in pat.stages)
            lines.append(f"  support {pat.support}: {stages}")
    return "\n".join(lines) + "\n"


def format_complexity(c: ComplexityReport) -> str:
    rows = [("plc_addresses", c.n_ips), ("flows", c.n_flows),
            ("outer_iterations", c.outer_iterations), ("middle_iterations", c.middle_iterations),
            ("inner_iterations", c.inner_iterations)]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k:<{width}}  {v}" for k, v in rows]
    for flow, n in c.lengths_per_flow.items():
        lines.append(f"lengths {flow}  {n}")
    for group, n in c.fields_per_group.items():
        lines.append(f"fields {group}  {n}")
    return "\n".join(lines) + "\n"


def complexity_json_lines(c: ComplexityReport) -> str:
    out = [json.dumps({"metric": k, "value": v}) for k, v in
           (("n_ips", c.n_ips), ("n_flows", c.n_flows), ("outer_iterations", c.outer_iterations),
            ("middle_iterations", c.middle_iterations), ("inner_iterations", c.inner_iterations))]
    out += [json.dumps({"metric": "lengths_per_flow", "flow": k, "value": v})
            for k, v in c.lengths_per_flow.items()]
    out += [json.dumps({"metric": "fields_per_group", "group": k, "value": v})
            for k, v in c.fields_per_group.items()]
    return "\n".join(out) + "\n"


# -- ground truth comparison --------------------------------------------------

def profile_key(p: FieldProfile) -> Key:
    g = p.ref.group
    return (str(g.flow.plc), g.flow.proto.value, g.direction.value, g.length, p.offset, p.width)


@dataclass
class FieldMatch:
    truth: TruthField
    profile: Optional[FieldProfile]

    @property
    def bounds_match(self) -> bool:
        p = self.profile
        return p is not None and (p.lower, p.upper, p.scale) == (self.truth.lower, self.truth.upper,
                                                                 self.truth.scale)


@dataclass
class TruthComparison:
    true_positives: int
    false_positives: int
    false_negatives: int
    matches: List[FieldMatch] = field(default_factory=list)
    # predicted fields with no real component behind them (decoys included)
    spurious: List[FieldProfile] = field(default_factory=list)

    @property
    def precision(self) -> float:
        n = self.true_positives + self.false_positives
        return self.true_positives / n if n else 1.0

    @property
    def recall(self) -> float:
        n = self.true_positives + self.false_negatives
        return self.true_positives / n if n else 1.0

    @property
    def bounds_exact(self) -> bool:
        return all(m.bounds_match for m in self.matches)

    def format(self) -> str:
        lines = [f"precision {self.precision:.4f}  recall {self.recall:.4f}  "
                 f"tp {self.true_positives}  fp {self.false_positives}  fn {self.false_negatives}"]
        for m in self.matches:
            t = m.truth
            got = "missing" if m.profile is None else \
                f"{m.profile.lower}..{m.profile.upper}/{m.profile.scale}"
            flag = "ok" if m.bounds_match else "MISMATCH"
            lines.append(f"  {t.name:<24} want {t.lower}..{t.upper}/{t.scale}  got {got}  {flag}")
        for p in self.spurious:
            lines.append(f"  spurious {p.ref}")
        return "\n".join(lines) + "\n"


def compare_truth(model: AttackModel, truth: GroundTruth) -> TruthComparison:
    """Offset-level precision/recall of changeable fields, plus per-component bounds."""
    predicted: Dict[Key, FieldProfile] = {profile_key(p): p for p in model.changeable}
    real = {f.key: f for f in truth.real_fields}
    matches = [FieldMatch(f, predicted.get(k)) for k, f in real.items()]
    spurious = [p for k, p in predicted.items() if k not in real]
    tp = sum(1 for m in matches if m.profile is not None)
    return TruthComparison(tp, len(spurious), len(matches) - tp, matches, spurious)
