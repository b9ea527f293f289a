"""Injection policies and their YAML form."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from ..capture import FlowKey
from ..inference.fields import FieldProfile, FieldRef, GroupRef
from ..inference.model import AttackModel
from ..proto import Direction, Endpoint, Proto


class PolicyViolation(Exception):
    """Raised in strict mode when a strategy value breaks an enabled stealth constraint."""


class UnknownTarget(LookupError):
    pass


class PolicyFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FixValue:
    value: int


@dataclass(frozen=True)
class Freeze:
    pass


@dataclass(frozen=True)
class Ramp:
    step: int


@dataclass(frozen=True)
class RandomInBounds:
    seed: Optional[int] = None


Strategy = Union[FixValue, Freeze, Ramp, RandomInBounds]


@dataclass(frozen=True)
class Stealth:
    respect_bounds: bool = True
    respect_scale: bool = True
    respect_sequence: bool = True

    @classmethod
    def off(cls) -> "Stealth":
        return cls(False, False, False)


@dataclass
class InjectionPolicy:
    target: FieldRef
    strategy: Strategy
    stealth: Stealth = field(default_factory=Stealth)
    # [start_us, end_us); None means always active
    active_window: Optional[Tuple[int, int]] = None
    name: str = ""

    def active(self, ts_us: int) -> bool:
        if self.active_window is None:
            return True
        start, end = self.active_window
        return start <= ts_us < end

    @property
    def label(self) -> str:
        return self.name or str(self.target)


def resolve_profile(model: AttackModel, policy: InjectionPolicy) -> FieldProfile:
    profile = model.profile(policy.target)
    if profile is None:
        raise UnknownTarget(f"no profiled field {policy.target} in the model")
    return profile


def find_target(model: AttackModel, plc: Endpoint, direction: Direction, length: int,
                offset: int, width: Optional[int] = None, proto: Optional[Proto] = None,
                hmi: Optional[Endpoint] = None) -> FieldRef:
    """Locate a profiled field from the parts a human would write down."""
    hits = []
    for p in model.profiles:
        g = p.ref.group
        if (g.flow.plc == plc and g.direction is direction and g.length == length
                and p.offset == offset and (width is None or p.width == width)
                and (proto is None or g.flow.proto is proto)
                and (hmi is None or g.flow.hmi == hmi)):
            hits.append(p.ref)
    if len(hits) != 1:
        what = f"{plc} {direction.value} len={length} offset={offset}"
        raise UnknownTarget(f"{'no' if not hits else 'ambiguous'} field for {what}")
    return hits[0]


# -- YAML ---------------------------------------------------------------------

def _int(value: Any) -> int:
    if isinstance(value, int):
        return value
    return int(str(value), 0)


def _strategy(d: Dict[str, Any], profile: Optional[FieldProfile]) -> Strategy:
    kind = str(d.get("type", "")).lower()
    if kind in ("fix", "fixvalue", "fix_value"):
        if "hex" in d:
            raw = bytes.fromhex(str(d["hex"]))
            order = profile.byteorder if profile is not None else "little"
            return FixValue(int.from_bytes(raw, order))
        return FixValue(_int(d["value"]))
    if kind == "freeze":
        return Freeze()
    if kind == "ramp":
        return Ramp(_int(d.get("step", 1)))
    if kind in ("random", "randominbounds", "random_in_bounds"):
        return RandomInBounds(None if d.get("seed") is None else _int(d["seed"]))
    raise PolicyFormatError(f"unknown strategy {kind!r}")


def policy_from_dict(d: Dict[str, Any], model: Optional[AttackModel] = None) -> InjectionPolicy:
    try:
        target = d["target"]
        if isinstance(target, str):
            ref = FieldRef.parse(target)
        else:
            plc = Endpoint.parse(str(target["plc"]))
            direction = Direction.parse(str(target.get("direction", "response")))
            proto = Proto(target["proto"]) if "proto" in target else None
            hmi = Endpoint.parse(str(target["hmi"])) if "hmi" in target else None
            if model is not None:
                ref = find_target(model, plc, direction, int(target["length"]), int(target["offset"]),
                                  target.get("width"), proto, hmi)
            else:
                if proto is None or hmi is None:
                    raise PolicyFormatError("without a model, targets need hmi and proto")
                ref = FieldRef(GroupRef(FlowKey(hmi, plc, proto), direction, int(target["length"])),
                               int(target["offset"]), int(target.get("width", 1)))
        profile = model.profile(ref) if model is not None else None
        stealth = d.get("stealth", {})
        if isinstance(stealth, bool):
            flags = Stealth(stealth, stealth, stealth)
        else:
            flags = Stealth(bool(stealth.get("bounds", True)), bool(stealth.get("scale", True)),
                            bool(stealth.get("sequence", True)))
        window = d.get("window")
        window = (int(window[0]), int(window[1])) if window is not None else None
        return InjectionPolicy(ref, _strategy(d.get("strategy", {}), profile), flags, window,
                               str(d.get("name", "")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PolicyFormatError):
            raise
        raise PolicyFormatError(f"malformed policy: {exc!r}") from None


def policy_to_dict(p: InjectionPolicy) -> Dict[str, Any]:
    s = p.strategy
    if isinstance(s, FixValue):
        strategy = {"type": "fix", "value": s.value}
    elif isinstance(s, Freeze):
        strategy = {"type": "freeze"}
    elif isinstance(s, Ramp):
        strategy = {"type": "ramp", "step": s.step}
    else:
        strategy = {"type": "random", "seed": s.seed}
    out = {"name": p.name, "target": str(p.target), "strategy": strategy,
           "stealth": {"bounds": p.stealth.respect_bounds, "scale": p.stealth.respect_scale,
                       "sequence": p.stealth.respect_sequence}}
    if p.active_window is not None:
        out["window"] = list(p.active_window)
    return out


def load_policies(path: Union[str, os.PathLike], model: Optional[AttackModel] = None) -> List[InjectionPolicy]:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise PolicyFormatError(f"not valid YAML: {exc}") from None
    if isinstance(data, dict):
        data = data.get("policies", [data])
    if not isinstance(data, list):
        raise PolicyFormatError("policy file must hold a list of policies")
    return [policy_from_dict(d, model) for d in data]


def dump_policies(policies: List[InjectionPolicy], path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump({"policies": [policy_to_dict(p) for p in policies]}, fh, sort_keys=False)
