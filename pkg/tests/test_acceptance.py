"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line to the terminal,
even under output capture, so ``pytest -v`` shows the scorecard inline.
"""
import contextlib
import dataclasses
import hashlib
import math
import random
import time

import pytest
import yaml

from icsfdia.capture import Trace, classify, dumps_trace, load_trace
from icsfdia.cli import main
from icsfdia.inference import FieldKind, build_attack_model, find_period, value_stats
from icsfdia.injector import (OUT_OF_BOUNDS, FixValue, Freeze, InjectionPolicy, RandomInBounds, Relay,
                              Stealth, check_trace, find_target, load_policies,
                              restore_trace, rewrite_trace)
from icsfdia.proto import (CipLikeHeader, Direction, Endpoint, Frame, FrameError, ModbusLikeHeader,
                           Proto, decode_frame, encode_frame, extract_data_field)
from icsfdia.report import compare_truth, profile_key
from icsfdia.twin import PadField, default_scenario, load_truth, run_scenario, sutd_scenario
from icsfdia.twin.live import HmiPoller, PlcEmulator, flow_of
from icsfdia.twin.presets import WINDFARM


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(n, what):
        try:
            yield
        except BaseException as exc:
            with capsys.disabled():
                print(f"\ncriterion {n}: FAIL  {what}  ({type(exc).__name__})")
            raise
        with capsys.disabled():
            print(f"\ncriterion {n}: PASS  {what}")
    return run


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _refs(model, truth):
    keyed = {profile_key(p): p.ref for p in model.changeable}
    return {f.name: keyed[f.key] for f in truth.real_fields}


def _victim_frames(trace, ref):
    g = ref.group
    return [f for f in trace.frames if f.src == g.flow.plc and f.dst == g.flow.hmi and f.len == g.length]


def test_c1_oracle_recovery(tmp_path, criterion, capsys):
    with criterion(1, "oracle recovery P=R=1, exact bounds, < 5 s"):
        trace_path = tmp_path / "t.trace"
        t0 = time.perf_counter()
        assert main(["twin", "--scenario", "default", "--cycles", "200", "--out", str(trace_path)]) == 0
        assert main(["analyze", str(trace_path), "--compare-truth", str(tmp_path / "t.truth")]) == 0
        elapsed = time.perf_counter() - t0
        out = capsys.readouterr().out
        truth = load_truth(tmp_path / "t.truth")
        assert len(truth.real_fields) == 8
        trace = load_trace(trace_path)
        for field in truth.real_fields:
            order = "little" if field.endianness == "LE" else "big"
            values = [int.from_bytes(extract_data_field(f)[field.offset:field.offset + field.width], order)
                      for f in trace.frames if str(f.src) == field.plc and f.len == field.frame_length]
            assert sum(1 for a, b in zip(values, values[1:]) if a != b) >= 2, field.name
        cmp = compare_truth(build_attack_model(trace), truth)
        assert (cmp.precision, cmp.recall) == (1.0, 1.0)
        assert cmp.bounds_exact and len(cmp.matches) == 8
        assert "precision 1.0000  recall 1.0000" in out
        assert elapsed < 5.0, elapsed


def test_c2_reference_bounds(default_model, default_truth, criterion):
    with criterion(2, "toggle bounds 00-01 and analog bounds 0000-b80b"):
        refs = _refs(default_model, default_truth)
        for name in ("system switch", "brake light", "contractor light"):
            p = default_model.profile(refs[name])
            assert p.kind is FieldKind.TOGGLE
            assert (p.hex(p.lower), p.hex(p.upper)) == ("00", "01"), name
        panel = default_model.profile(refs["panel turbine speed"])
        assert (panel.hex(panel.lower), panel.hex(panel.upper)) == ("0000", "b80b")


def test_c3_sequence_mining(default_model, default_truth, criterion):
    with criterion(3, "Case 1 / Case 2 stage orders, >= 5 episodes each, consistency 1.0"):
        assert sum(1 for c in default_truth.cases if c.case == 0) >= 5
        assert sum(1 for c in default_truth.cases if c.case == 1) >= 5
        refs = _refs(default_model, default_truth)
        speed = sorted([refs["panel turbine speed"], refs["turbine speed"], refs["wind speed"]], key=str)
        case2 = [[refs["system switch"]], speed, [refs["brake light"]], [refs["contractor light"]]]
        case1 = case2 + [[refs["place a new barrel"]]]
        patterns = {len(p.fields): p for p in default_model.sequence.patterns}
        assert patterns[7].stages == case1 and patterns[7].support >= 5
        assert patterns[6].stages == case2 and patterns[6].support >= 5
        assert default_model.sequence.edges
        assert all(e.consistency == 1.0 for e in default_model.sequence.edges)


MODIFIED = [
    ("system switch", 0, "01020000"),
    ("conveyor belt speed", 8, "05001d00"),
    ("panel turbine speed", 16, "0600ffff"),
    ("place a new barrel", 20, "0200010003"),
    ("brake light", 0, "00"),
    ("contractor light", 1, "01"),
    ("wind speed", 2, "50"),
    ("turbine speed", 10, "0000"),
]


def test_c4_injection_fidelity(default_trace, default_model, default_truth, reference_policy_path, criterion):
    with criterion(4, "modified values, non-target frames identical, restore hash"):
        out, log = rewrite_trace(default_trace, default_model, load_policies(reference_policy_path, default_model))
        refs = _refs(default_model, default_truth)
        for name, start, want in MODIFIED:
            frames = _victim_frames(out, refs[name])
            assert frames
            for f in frames:
                assert extract_data_field(f)[start:start + len(want) // 2].hex() == want, name
        logged = {e.index for e in log.entries}
        assert all(a == b for i, (a, b) in enumerate(zip(default_trace.frames, out.frames)) if i not in logged)
        digest = lambda t: hashlib.sha256(dumps_trace(t).encode()).hexdigest()
        assert digest(restore_trace(out, log)) == digest(default_trace)


def test_c5_stealth_closure(default_trace, default_model, default_truth, criterion):
    with criterion(5, "stealthy rewrite re-analyzes within bounds; loud rewrite flagged"):
        policies = [InjectionPolicy(p.ref, RandomInBounds(seed=21)) for p in default_model.changeable]
        out, log = rewrite_trace(default_trace, default_model, policies)
        assert log.entries
        assert check_trace(out, default_model) == []
        for p in build_attack_model(out).changeable:
            orig = default_model.profile(p.ref)
            assert orig is not None and orig.lower <= p.lower and p.upper <= orig.upper
        ref = _refs(default_model, default_truth)["panel turbine speed"]
        # on scale, one step past the upper bound
        loud = InjectionPolicy(ref, FixValue(3100), Stealth(respect_bounds=False))
        out, _ = rewrite_trace(default_trace, default_model, [loud])
        kinds = [v.kind for verdict in check_trace(out, default_model) for v in verdict.violations]
        assert kinds.count(OUT_OF_BOUNDS) >= 1


def test_c6_countermeasures(criterion):
    with criterion(6, "pad field adds a spurious field; fake PLCs add exactly N IPs, linear outer loop"):
        trace, truth = run_scenario(default_scenario(pad_field=PadField(1, 40, 2, 9)), 200)
        model = build_attack_model(trace)
        cmp = compare_truth(model, truth)
        assert cmp.spurious
        assert all(p.kind is not FieldKind.CONSTANT for p in cmp.spurious)
        real = {f.key for f in truth.real_fields}
        assert all(profile_key(p) not in real for p in cmp.spurious)

        cx = {}
        for n in (0, 2, 14):
            t, _ = run_scenario(dataclasses.replace(default_scenario(), fake_plc_count=n), 40)
            cx[n] = build_attack_model(t).complexity
        assert all(cx[n].n_ips == cx[0].n_ips + n for n in cx)
        slope = (cx[2].outer_iterations - cx[0].outer_iterations) / 2
        assert slope > 0
        assert cx[14].outer_iterations == cx[0].outer_iterations + 14 * slope


def test_c7_scale(criterion):
    with criterion(7, "16-PLC scenario, lengths 183/520/130, 10k frames < 30 s"):
        t0 = time.perf_counter()
        scenario = sutd_scenario()
        trace, truth = run_scenario(scenario, 313)
        assert len(trace) >= 10_000
        model = build_attack_model(trace)
        elapsed = time.perf_counter() - t0
        assert model.complexity.n_ips == 16
        lengths = {f.len for f in trace.frames if f.src != scenario.hmi}
        assert {183, 520, 130} <= lengths
        cmp = compare_truth(model, truth)
        assert cmp.recall == 1.0 and cmp.bounds_exact
        assert elapsed < 30.0, elapsed


def _relay_bytes(model, flow, seed):
    ref = find_target(model, WINDFARM, Direction.RESPONSE, 110, 10)
    policy = InjectionPolicy(ref, RandomInBounds(), Stealth.off())
    with PlcEmulator(flow) as plc:
        with Relay(("127.0.0.1", 0), plc.address, model, [policy], seed=seed) as relay:
            return HmiPoller(flow, relay.address).run()


def test_c8_property_suites(tmp_path, default_trace, default_model, reference_policy_path, criterion, capsys):
    with criterion(8, "codec, partition, periodicity, gcd oracle, determinism across subcommands"):
        rng = random.Random(8)
        # codec round trip and fuzz
        for _ in range(300):
            payload = rng.randbytes(rng.randrange(0, 200))
            for head, proto in ((ModbusLikeHeader(rng.randrange(1 << 16)), Proto.MODBUS),
                                (CipLikeHeader(rng.randrange(1 << 32)), Proto.CIP)):
                assert decode_frame(encode_frame(head, payload), proto)[1] == payload
            junk = rng.randbytes(rng.randrange(0, 40))
            for proto in (Proto.MODBUS, Proto.CIP):
                try:
                    decode_frame(junk, proto)
                except FrameError:
                    pass
        # partition law
        hosts = [Endpoint(f"10.0.0.{i}", p) for i, p in ((1, 1000), (2, 502), (3, 44818))]
        frames = [Frame(i, rng.choice(hosts), rng.choice(hosts), rng.choice(list(Proto)), rng.randbytes(12))
                  for i in range(400)]
        flows = classify(Trace(frames))
        in_flows = sum(len(f.frames) for f in flows)
        assert in_flows + flows.ignored == len(frames)
        assert flows.ignored == sum(1 for f in frames if f.proto is Proto.OTHER)
        # periodicity
        assert find_period([100, 120, 80, 80, 50] * 10)[0] == 5
        # gcd scale against a brute-force divisor oracle
        for _ in range(300):
            values = {rng.randrange(0, 3000) for _ in range(rng.randrange(1, 10))}
            lo, span = min(values), max(values) - min(values)
            oracle = 1 if span == 0 else next(d for d in range(span, 0, -1)
                                              if all((v - lo) % d == 0 for v in values))
            assert value_stats(values)[2] == oracle
            assert math.gcd(*[v - lo for v in values]) in (0, oracle)

        # determinism: each subcommand twice with the same seed
        def run_all(tag):
            d = tmp_path / tag
            d.mkdir()
            assert main(["--seed", "5", "twin", "--cycles", "200", "--out", str(d / "t.trace")]) == 0
            assert main(["analyze", str(d / "t.trace"), "--report", str(d / "r.txt")]) == 0
            assert main(["inject", str(d / "t.trace"), "--model", str(d / "t.model"),
                         "--policy", reference_policy_path, "--out", str(d / "i.trace"), "--seed", "5"]) == 0
            policy = d / "rand.yaml"
            policy.write_text(yaml.safe_dump([{"target": {"plc": "192.168.1.20:502", "length": 110, "offset": 10},
                                               "strategy": {"type": "random"}}]))
            assert main(["inject", str(d / "t.trace"), "--model", str(d / "t.model"),
                         "--policy", str(policy), "--out", str(d / "r.trace"), "--seed", "5"]) == 0
            capsys.readouterr()
            main(["check", str(d / "i.trace"), "--model", str(d / "t.model")])
            main(["complexity", str(d / "t.trace"), "--json-lines"])
            return [_sha(d / n) for n in ("t.trace", "t.truth", "t.model", "r.txt", "i.trace", "i.injlog",
                                          "r.trace", "r.injlog")] + [capsys.readouterr().out]

        assert run_all("a") == run_all("b")
        flow = flow_of(default_trace, WINDFARM.addr)
        assert _relay_bytes(default_model, flow, 5) == _relay_bytes(default_model, flow, 5)


def test_c9_live_relay_freeze(tmp_path, criterion):
    with criterion(9, "live relay Freeze hides turbine changes over >= 20 cycles"):
        trace, truth = run_scenario(default_scenario(), 200)
        model = build_attack_model(trace)
        flow = flow_of(trace, WINDFARM.addr)
        ref = find_target(model, WINDFARM, Direction.RESPONSE, 110, 10)
        prof = model.profile(ref)
        with PlcEmulator(flow) as plc:
            with Relay(("127.0.0.1", 0), plc.address, model, [InjectionPolicy(ref, Freeze())], seed=9) as relay:
                hmi_seen = HmiPoller(flow, relay.address).run()
        # PLC-side log: what the emulator sent; HMI-side log: what the poller received
        plc_values = [prof.read(r[8:]) for r in plc.sent if len(r) == 110]
        hmi_values = [prof.read(r[8:]) for r in hmi_seen if len(r) == 110]
        assert len(hmi_values) >= 20 and len(hmi_values) == len(plc_values)
        assert len(set(hmi_values)) == 1
        assert len(set(plc_values)) > 1
        log = relay.log
        frozen = {prof.read(extract_data_field(e.frame)) for e in log.entries}
        assert frozen == set(hmi_values)
        originals = {prof.read(e.orig[8:]) for e in log.entries}
        assert originals <= set(plc_values) and originals - frozen
        assert len(log.entries) == sum(1 for v in plc_values if v != hmi_values[0])
