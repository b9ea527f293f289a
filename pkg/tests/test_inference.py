import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsfdia.capture import Trace, classify
from icsfdia.inference import (FieldKind, GroupTooSmall, LengthGroup, NoPeriodFound, Thresholds,
                               build_attack_model, dumps_model, find_changed_fields, find_period,
                               loads_model, mine_sequence, profile_fields, sort_periodic,
                               value_stats)
from icsfdia.inference.fields import GroupRef, split_fields
from icsfdia.inference.sequence import change_times, split_episodes
from icsfdia.proto import CipLikeHeader, Direction, Endpoint, Frame, Proto, encode_frame
from icsfdia.report import compare_truth, profile_key
from icsfdia.twin import default_scenario, periodic_example_scenario, run_scenario

HMI = Endpoint("10.0.0.1", 1000)
PLC = Endpoint("10.0.0.2", 44818)


def _group(rows):
    frames = [Frame(i * 10, PLC, HMI, Proto.CIP, encode_frame(CipLikeHeader(), bytes(r)), Direction.RESPONSE)
              for i, r in enumerate(rows)]
    flow = classify(Trace(frames))
    ref = GroupRef(flow[0].key if len(flow) else None, Direction.RESPONSE, frames[0].len)
    return LengthGroup(ref, len(frames), frames)


def _by_name(model, truth):
    keyed = {profile_key(p): p.ref for p in model.changeable}
    return {f.name: keyed[f.key] for f in truth.real_fields}


# -- schedule -----------------------------------------------------------------

def test_periodic_example_period_five():
    trace, _ = run_scenario(periodic_example_scenario(), 30)
    sched = sort_periodic(classify(trace)[0])
    assert sched.period == 5
    assert sched.request_lengths == [100, 120, 80, 80, 50]
    assert sched.response_lengths == [70, 90, 110, 110, 60]
    assert sched.coverage == 1.0


def test_find_period_plain_lists():
    assert find_period([100, 120, 80, 80, 50] * 6)[0] == 5
    assert find_period([7] * 10)[0] == 1
    with pytest.raises(NoPeriodFound):
        find_period([1, 2, 3, 4, 5, 6, 7, 8], coverage_threshold=1.0)


def test_find_period_tolerates_a_stray_frame():
    lengths = [100, 120, 80, 80, 50] * 20
    lengths[37] = 999
    p, template, _, coverage = find_period(lengths)
    assert p == 5 and template == [100, 120, 80, 80, 50]
    assert coverage == pytest.approx(99 / 100)


@given(st.lists(st.integers(40, 60), min_size=1, max_size=8), st.integers(2, 6))
def test_schedule_soundness(template, reps):
    lengths = template * reps
    p, req_t, _, coverage = find_period(lengths, coverage_threshold=1.0)
    assert len(template) % p == 0
    assert all(v == req_t[k % p] for k, v in enumerate(lengths))


# -- diff and profile -----------------------------------------------------------

@settings(max_examples=60)
@given(st.integers(2, 12).flatmap(
    lambda w: st.lists(st.lists(st.integers(0, 3), min_size=w, max_size=w), min_size=2, max_size=10)))
def test_diff_completeness_brute_force(rows):
    group = _group(rows)
    diff = find_changed_fields(group)
    want = [c for c in range(len(rows[0])) if len({r[c] for r in rows}) >= 2]
    assert diff.changed_offsets == want
    assert all(diff.static_mask[c] == (c not in want) for c in range(len(rows[0])))


@settings(max_examples=60)
@given(st.lists(st.lists(st.integers(0, 255), min_size=6, max_size=6), min_size=2, max_size=12))
def test_profile_bounds_hold(rows):
    group = _group(rows)
    for p in profile_fields(group, find_changed_fields(group)):
        values = [p.read(bytes(r)) for r in rows]
        assert set(values) == p.observed
        assert all(p.lower <= v <= p.upper for v in values)
        assert all((v - p.lower) % p.scale == 0 for v in values)
        assert p.width <= 2


def test_group_too_small():
    with pytest.raises(GroupTooSmall):
        find_changed_fields(_group([[1, 2]]))


def _divisor_oracle(values):
    lo = min(values)
    span = max(values) - lo
    if span == 0:
        return 1
    for d in range(span, 0, -1):
        if all((v - lo) % d == 0 for v in values):
            return d


@given(st.sets(st.integers(0, 2000), min_size=1, max_size=12))
def test_gcd_scale_matches_divisor_oracle(values):
    lower, upper, scale = value_stats(values)
    assert (lower, upper) == (min(values), max(values))
    assert scale == _divisor_oracle(values)


def test_value_stats_example():
    assert value_stats({0, 5, 10, 25}) == (0, 25, 5)


def test_split_fields_requires_co_change():
    # bytes 0,1 moved together once; byte 2 always alone; 3..6 together
    co = np.array([True, False, False, True, True, True])
    assert split_fields([0, 1, 2, 3, 4, 5, 6], co, 2) == [(0, 2), (2, 1), (3, 2), (5, 2)]
    assert split_fields([0, 1, 2, 3, 4, 5, 6], co, None) == [(0, 2), (2, 1), (3, 4)]
    assert split_fields([1, 3], co, 2) == [(1, 1), (3, 1)]


def test_endianness_recorded_both_ways():
    rows = [[0x00, 0x00], [0xb8, 0x0b], [0xe8, 0x03]]
    (p,) = profile_fields(_group(rows), find_changed_fields(_group(rows)))
    assert (p.lower, p.upper) == (0, 3000)
    assert p.hex(p.upper) == "b80b"
    assert (p.alt_lower, p.alt_upper) == (0, 0xe803)


# -- whole model against the twin ----------------------------------------------

def test_oracle_recovery_default(default_model, default_truth):
    cmp = compare_truth(default_model, default_truth)
    assert (cmp.precision, cmp.recall) == (1.0, 1.0)
    assert cmp.bounds_exact
    assert len(default_model.changeable) == 8


@pytest.mark.parametrize("seed", [1, 99, 123456789])
def test_oracle_recovery_other_seeds(seed):
    trace, truth = run_scenario(default_scenario(rng_seed=seed), 200)
    cmp = compare_truth(build_attack_model(trace), truth)
    assert (cmp.precision, cmp.recall, cmp.bounds_exact) == (1.0, 1.0, True)


def test_reference_ranges(default_model, default_truth):
    refs = _by_name(default_model, default_truth)
    for name in ("system switch", "brake light", "contractor light"):
        p = default_model.profile(refs[name])
        assert p.kind is FieldKind.TOGGLE
        assert (p.hex(p.lower), p.hex(p.upper)) == ("00", "01")
    panel = default_model.profile(refs["panel turbine speed"])
    assert (panel.hex(panel.lower), panel.hex(panel.upper)) == ("0000", "b80b")
    turbine = default_model.profile(refs["turbine speed"])
    assert (turbine.hex(turbine.lower), turbine.hex(turbine.upper)) == ("ff39", "3b45")


def test_case_patterns(default_model, default_truth):
    refs = _by_name(default_model, default_truth)
    speed = sorted([refs["panel turbine speed"], refs["turbine speed"], refs["wind speed"]], key=str)
    case2 = [[refs["system switch"]], speed, [refs["brake light"]], [refs["contractor light"]]]
    case1 = case2 + [[refs["place a new barrel"]]]
    stages = {len(p.fields): p.stages for p in default_model.sequence.patterns}
    assert stages[7] == case1
    assert stages[6] == case2
    assert all(p.support >= 5 for p in default_model.sequence.patterns)


def test_sequence_soundness_by_replay(default_model):
    seq = default_model.sequence
    events = sorted(((ts, p.ref) for p in default_model.profiles
                     if p.kind is not FieldKind.CONSTANT and p.change_rate <= 0.5
                     for ts in change_times(p)), key=lambda e: (e[0], str(e[1])))
    episodes = split_episodes(events, seq.episode_gap_us)
    assert seq.edges
    for e in seq.edges:
        both = [ep for ep in episodes if e.earlier in ep and e.later in ep]
        ahead = sum(1 for ep in both if ep[e.later] - ep[e.earlier] > seq.tie_window_us)
        assert len(both) == e.support
        assert ahead / len(both) >= 0.9
        assert e.consistency == 1.0


def test_single_episode_gives_no_edges(default_trace):
    short = Trace([f for f in default_trace.frames if f.ts_us < 12 * 100_000])
    model = build_attack_model(short)
    rel = mine_sequence(classify(short), model.profiles, min_support=2)
    assert rel.edges == []


def test_empty_trace_empty_model():
    model = build_attack_model(Trace([]))
    assert model.flows == [] and model.profiles == []
    assert model.complexity.n_ips == 0


def test_model_text_round_trip(default_model):
    text = dumps_model(default_model)
    again = loads_model(text)
    assert dumps_model(again) == text
    assert [(p.ref, p.lower, p.upper, p.scale) for p in again.profiles] == \
        [(p.ref, p.lower, p.upper, p.scale) for p in default_model.profiles]


def test_determinism(default_trace, default_model):
    assert dumps_model(build_attack_model(default_trace)) == dumps_model(default_model)


def test_complexity_counts(default_model):
    cx = default_model.complexity
    assert (cx.n_ips, cx.n_flows, cx.outer_iterations) == (2, 2, 2)
    assert cx.middle_iterations == 8
    assert cx.inner_iterations == 8


def test_complexity_outer_loop_doubles():
    base = default_scenario()
    doubled = dataclasses.replace(base, fake_plc_count=2)
    a = build_attack_model(run_scenario(base, 40)[0]).complexity
    b = build_attack_model(run_scenario(doubled, 40)[0]).complexity
    assert b.outer_iterations == 2 * a.outer_iterations


def test_jittered_trace_still_sorts():
    s = dataclasses.replace(default_scenario(), jitter=True)
    trace, truth = run_scenario(s, 200)
    model = build_attack_model(trace)
    assert all(f.schedule is not None and f.schedule.period == 2 for f in model.flows)
    cmp = compare_truth(model, truth)
    assert cmp.recall == 1.0 and cmp.bounds_exact


def test_width_cap_flag_lifts_cap(default_trace):
    model = build_attack_model(default_trace, Thresholds(width_cap=0))
    assert len(model.changeable) == 8
