"""Recovering the HMI's periodic polling order from request lengths."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from statistics import median
from typing import List, Optional, Sequence, Tuple

from ..capture import Flow, FlowKey


class NoPeriodFound(ValueError):
    pass


@dataclass
class PeriodicSchedule:
    key: Optional[FlowKey]
    period: int
    request_lengths: List[int]
    response_lengths: List[int]
    coverage: float
    # median time for one full repetition of the schedule
    cycle_us: int = field(default=0)


def _slot_modes(values: Sequence[int], p: int) -> List[int]:
    out = []
    for i in range(p):
        column = values[i::p]
        out.append(Counter(column).most_common(1)[0][0] if column else 0)
    return out


def _matches(values: Sequence[int], template: Sequence[int]) -> int:
    p = len(template)
    return sum(1 for k, v in enumerate(values) if v == template[k % p])


def find_period(requests: Sequence[int], responses: Sequence[int] = (),
                coverage_threshold: float = 0.95,
                max_period: int = 64) -> Tuple[int, List[int], List[int], float]:
    """Smallest p whose slot-wise majority template explains enough frames.

    Responses are paired with requests by position, so response k falls in
    slot ``k % p``. Only periods seen at least twice in full are considered.
    """
    n = len(requests)
    total = n + len(responses)
    for p in range(1, min(max_period, n // 2) + 1):
        req_t = _slot_modes(requests, p)
        resp_t = _slot_modes(responses, p)
        hits = _matches(requests, req_t) + _matches(responses, resp_t)
        coverage = hits / total if total else 0.0
        if coverage >= coverage_threshold:
            return p, req_t, resp_t, coverage
    raise NoPeriodFound(f"no period <= {max_period} covers {coverage_threshold:.0%} of "
                        f"{n} requests")


def sort_periodic(flow: Flow, coverage_threshold: float = 0.95,
                  max_period: int = 64) -> PeriodicSchedule:
    requests = flow.requests
    responses = flow.responses
    if len(requests) < 2:
        raise NoPeriodFound(f"flow {flow.key} has fewer than two requests")
    p, req_t, resp_t, coverage = find_period([f.len for f in requests],
                                             [f.len for f in responses],
                                             coverage_threshold, max_period)
    stamps = [f.ts_us for f in requests]
    gaps = [b - a for a, b in zip(stamps, stamps[p:])]
    cycle = int(median(gaps)) if gaps else 0
    return PeriodicSchedule(flow.key, p, req_t, resp_t, coverage, cycle)
