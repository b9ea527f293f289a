"""Mining the order in which fields change."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..capture import Flow
from .fields import FieldKind, FieldProfile, FieldRef
from .schedule import NoPeriodFound, sort_periodic


@dataclass(frozen=True)
class Edge:
    earlier: FieldRef
    later: FieldRef
    support: int
    consistency: float


@dataclass
class Pattern:
    """Stage order shared by all episodes that touch exactly ``fields``."""

    fields: Tuple[FieldRef, ...]
    support: int
    stages: List[List[FieldRef]]


@dataclass
class SequenceRelation:
    edges: List[Edge] = field(default_factory=list)
    patterns: List[Pattern] = field(default_factory=list)
    episodes: int = 0
    tie_window_us: int = 0
    episode_gap_us: int = 0

    def predecessors(self, ref: FieldRef) -> List[FieldRef]:
        return [e.earlier for e in self.edges if e.later == ref]

    def stages(self, fields: Optional[Iterable[FieldRef]] = None) -> List[List[FieldRef]]:
        nodes = set(fields) if fields is not None else {r for e in self.edges for r in (e.earlier, e.later)}
        return layer([e for e in self.edges if e.earlier in nodes and e.later in nodes], nodes)


def layer(edges: Sequence[Edge], nodes: Set[FieldRef]) -> List[List[FieldRef]]:
    """Group nodes into stages: a node sits one stage after its latest predecessor."""
    graph: Dict[FieldRef, Set[FieldRef]] = {n: set() for n in nodes}
    for e in edges:
        graph[e.later].add(e.earlier)
    sorter = TopologicalSorter(graph)
    try:
        sorter.prepare()
    except CycleError:
        return [sorted(nodes, key=str)]
    stages = []
    while sorter.is_active():
        ready = sorted(sorter.get_ready(), key=str)
        stages.append(ready)
        sorter.done(*ready)
    return stages


def change_times(profile: FieldProfile) -> List[int]:
    line = profile.timeline
    return [ts for (_, a), (ts, b) in zip(line, line[1:]) if a != b]


def split_episodes(events: Sequence[Tuple[int, FieldRef]], gap_us: int) -> List[Dict[FieldRef, int]]:
    """Cut time-sorted change events wherever the quiet gap exceeds ``gap_us``.

    Each episode maps a field to the time of its first change in that episode.
    """
    episodes: List[Dict[FieldRef, int]] = []
    last = None
    for ts, ref in events:
        if last is None or ts - last > gap_us:
            episodes.append({})
        episodes[-1].setdefault(ref, ts)
        last = ts
    return episodes


def _edges(episodes: Sequence[Dict[FieldRef, int]], tie_us: int, min_support: int,
           threshold: float) -> List[Edge]:
    together: Dict[Tuple[FieldRef, FieldRef], int] = defaultdict(int)
    before: Dict[Tuple[FieldRef, FieldRef], int] = defaultdict(int)
    for ep in episodes:
        refs = list(ep)
        for a in refs:
            for b in refs:
                if a == b:
                    continue
                together[a, b] += 1
                if ep[b] - ep[a] > tie_us:
                    before[a, b] += 1
    out = []
    for (a, b), n in sorted(together.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        k = before.get((a, b), 0)
        if n >= min_support and k and k / n >= threshold:
            out.append(Edge(a, b, n, k / n))
    return out


def polling_cycle_us(flows: Iterable[Flow]) -> int:
    """Longest polling cycle among flows with a detectable schedule."""
    cycle = 0
    for flow in flows:
        try:
            cycle = max(cycle, sort_periodic(flow).cycle_us)
        except NoPeriodFound:
            continue
    return cycle


def mine_sequence(flows: Iterable[Flow], profiles: Iterable[FieldProfile],
                  min_support: int = 3, consistency_threshold: float = 0.9,
                  max_change_rate: float = 0.5, tie_window_us: Optional[int] = None,
                  episode_gap_cycles: float = 4.0) -> SequenceRelation:
    """Precedence edges between field-change events.

    A polled value is only seen once per polling cycle, so two first-changes
    closer than one cycle (``tie_window_us``, measured from ``flows`` when not
    given) count as simultaneous and give no edge. Episodes are separated by
    quiet gaps longer than ``episode_gap_cycles`` cycles. Fields changing on
    more than ``max_change_rate`` of their samples behave like noise rather
    than events and are left out.
    """
    if tie_window_us is None:
        tie_window_us = polling_cycle_us(flows)
    episode_gap_us = int(episode_gap_cycles * tie_window_us)
    events: List[Tuple[int, FieldRef]] = []
    for p in profiles:
        if p.kind is FieldKind.CONSTANT or p.change_rate > max_change_rate:
            continue
        events.extend((ts, p.ref) for ts in change_times(p))
    events.sort(key=lambda e: (e[0], str(e[1])))
    episodes = split_episodes(events, episode_gap_us)
    relation = SequenceRelation(_edges(episodes, tie_window_us, min_support, consistency_threshold),
                                episodes=len(episodes), tie_window_us=tie_window_us,
                                episode_gap_us=episode_gap_us)
    by_signature: Dict[frozenset, List[Dict[FieldRef, int]]] = defaultdict(list)
    for ep in episodes:
        by_signature[frozenset(ep)].append(ep)
    for sig, eps in sorted(by_signature.items(), key=lambda kv: (-len(kv[0]), sorted(map(str, kv[0])))):
        if len(sig) < 2 or len(eps) < min_support:
            continue
        edges = _edges(eps, tie_window_us, min_support, consistency_threshold)
        relation.patterns.append(Pattern(tuple(sorted(sig, key=str)), len(eps), layer(edges, set(sig))))
    return relation
