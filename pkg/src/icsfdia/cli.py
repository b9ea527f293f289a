"""Command-line entry point: twin, analyze, inject, relay, complexity, check."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import random
import sys
import tempfile
from typing import List, Optional, Tuple

from .capture import FormatError, VersionError, load_trace, save_trace
from .inference.model import ModelFormatError, Thresholds, build_attack_model, load_model, save_model
from .injector.policy import PolicyFormatError, PolicyViolation, UnknownTarget, load_policies
from .injector.relay import ConnectFailed, pick_flow, run_relay
from .injector.rewrite import log_path_for, rewrite_trace, save_log
from .injector.stealth import check_trace
from .proto import Endpoint
from .report import compare_truth, complexity_json_lines, format_complexity, format_report
from .twin import PRESETS, ConfigInvalid, PadField, load_scenario, load_truth, run_scenario, save_truth

log = logging.getLogger("icsfdia")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_ERROR = 2

# input problems that end a command with a message instead of a traceback
INPUT_ERRORS = (OSError, FormatError, VersionError, ModelFormatError, ConfigInvalid,
                PolicyFormatError, UnknownTarget, ValueError)


class CliError(Exception):
    pass


def _root(path: str) -> str:
    return os.path.splitext(path)[0]


def _atomic_write(path: str, write) -> None:
    """Write via a temp file in the same directory so failures leave nothing behind."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _hostport(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _pad(text: str) -> PadField:
    parts = text.split(":")
    if len(parts) not in (3, 4) or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError("expected SLOT:OFFSET:WIDTH[:SEED]")
    nums = [int(p) for p in parts] + ([0] if len(parts) == 3 else [])
    return PadField(*nums)


def _session_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = random.SystemRandom().getrandbits(32)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


# -- subcommands --------------------------------------------------------------

def cmd_twin(args) -> int:
    if args.out is None:
        raise CliError("twin needs --out")
    factory = PRESETS.get(args.scenario)
    scenario = factory() if factory else load_scenario(args.scenario)
    changes = {}
    if args.fake_plcs is not None:
        changes["fake_plc_count"] = args.fake_plcs
    if args.pad_field is not None:
        changes["pad_field"] = args.pad_field
    if args.jitter:
        changes["jitter"] = True
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    scenario = dataclasses.replace(scenario, **changes)
    print(f"seed: {scenario.rng_seed}", file=sys.stderr)
    trace, truth = run_scenario(scenario, args.cycles)
    truth_path = _root(args.out) + ".truth"
    _atomic_write(args.out, lambda p: save_trace(trace, p))
    try:
        _atomic_write(truth_path, lambda p: save_truth(truth, p))
    except BaseException:
        os.unlink(args.out)
        raise
    print(f"wrote {len(trace)} frames to {args.out} and ground truth to {truth_path}")
    return EXIT_OK


def _thresholds(args) -> Thresholds:
    return Thresholds(coverage_threshold=args.coverage, max_period=args.max_period,
                      width_cap=args.width_cap, endianness=args.endianness,
                      min_support=args.min_support, consistency_threshold=args.consistency)


def cmd_analyze(args) -> int:
    trace = load_trace(args.trace)
    model = build_attack_model(trace, _thresholds(args))
    out = args.out or _root(args.trace) + ".model"
    _atomic_write(out, lambda p: save_model(model, p))
    report = format_report(model)
    if args.report:
        _atomic_write(args.report, lambda p: _write_text(p, report))
    else:
        sys.stdout.write(report)
    if args.compare_truth:
        sys.stdout.write(compare_truth(model, load_truth(args.compare_truth)).format())
    print(f"model written to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_inject(args) -> int:
    if args.out is None:
        raise CliError("inject needs --out")
    trace = load_trace(args.trace)
    model = load_model(args.model)
    policies = load_policies(args.policy, model)
    try:
        out, injlog = rewrite_trace(trace, model, policies, _session_seed(args), strict=args.strict)
    except PolicyViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    log_path = log_path_for(args.out)
    _atomic_write(args.out, lambda p: save_trace(out, p))
    _atomic_write(log_path, lambda p: save_log(injlog, p))
    print(f"rewrote {len(injlog.entries)} frame(s), skipped {len(injlog.skipped)}; log in {log_path}")
    return EXIT_OK


def cmd_relay(args) -> int:
    model = load_model(args.model)
    policies = load_policies(args.policy, model)
    plc = Endpoint.parse(args.flow) if args.flow else None
    flow = pick_flow(model, policies, plc)
    try:
        injlog = run_relay(args.listen, args.upstream, model, policies, flow,
                           _session_seed(args), args.duration)
    except ConnectFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        _atomic_write(args.out, lambda p: save_log(injlog, p))
    print(f"relayed with {len(injlog.entries)} rewrite(s), {injlog.decode_errors} decode error(s)")
    return EXIT_OK


def cmd_complexity(args) -> int:
    trace = load_trace(args.trace)
    report = build_attack_model(trace).complexity
    sys.stdout.write(complexity_json_lines(report) if args.json_lines else format_complexity(report))
    return EXIT_OK


def cmd_check(args) -> int:
    trace = load_trace(args.trace)
    model = load_model(args.model)
    verdicts = check_trace(trace, model)
    for v in verdicts:
        for violation in v.violations:
            print(f"frame {v.index} ts {v.ts_us}: {violation}")
    count = sum(len(v.violations) for v in verdicts)
    print(f"{count} violation(s) in {len(verdicts)} frame(s)")
    return EXIT_VIOLATION if args.strict and count else EXIT_OK


# -- parser -------------------------------------------------------------------

def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for every random choice")
    parser.add_argument("--out", default=default, help="primary output path")
    parser.add_argument("--verbose", "-v", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icsfdia", description=__doc__)
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)

    p = sub.add_parser("twin", parents=[common], help="simulate HMI/PLC traffic")
    p.add_argument("--scenario", default="default",
                   help=f"preset ({', '.join(PRESETS)}) or YAML scenario path")
    p.add_argument("--cycles", type=int, default=200)
    p.add_argument("--fake-plcs", type=int, default=None, help="fake PLC countermeasure")
    p.add_argument("--pad-field", type=_pad, default=None, metavar="SLOT:OFFSET:WIDTH[:SEED]",
                   help="pseudorandom pad countermeasure")
    p.add_argument("--jitter", action="store_true")
    p.set_defaults(func=cmd_twin)

    p = sub.add_parser("analyze", parents=[common], help="infer the attack model from a trace")
    p.add_argument("trace")
    p.add_argument("--report", help="write the report here instead of stdout")
    p.add_argument("--compare-truth", metavar="TRUTH", help="score against twin ground truth")
    d = Thresholds()
    p.add_argument("--coverage", type=float, default=d.coverage_threshold)
    p.add_argument("--max-period", type=int, default=d.max_period)
    p.add_argument("--width-cap", type=int, default=d.width_cap, help="0 lifts the cap")
    p.add_argument("--endianness", choices=["LE", "BE"], default=d.endianness)
    p.add_argument("--min-support", type=int, default=d.min_support)
    p.add_argument("--consistency", type=float, default=d.consistency_threshold)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("inject", parents=[common], help="rewrite a recorded trace")
    p.add_argument("trace")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--strict", action="store_true", help="fail on the first policy violation")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("relay", parents=[common], help="rewrite frames on a live TCP session")
    p.add_argument("--listen", type=_hostport, required=True, metavar="HOST:PORT")
    p.add_argument("--upstream", type=_hostport, required=True, metavar="HOST:PORT")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--flow", help="modeled PLC endpoint the upstream stands for")
    p.add_argument("--duration", type=float, default=None, help="seconds; default until Ctrl-C")
    p.set_defaults(func=cmd_relay)

    p = sub.add_parser("complexity", parents=[common], help="loop counts of the inference")
    p.add_argument("trace")
    p.add_argument("--json-lines", action="store_true")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("check", parents=[common], help="stealth-check a trace against a model")
    p.add_argument("trace")
    p.add_argument("--model", required=True)
    p.add_argument("--strict", action="store_true", help="exit 1 when violations are found")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
