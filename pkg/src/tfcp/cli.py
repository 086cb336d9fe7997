"""Command-line front end.

Exit codes: 0 success, 1 a check did not hold (attack or anonymity
outcome), 2 configuration or parse error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .builders import ATTACKS, measure_anonymity, run_attacks
from .engine import InvariantViolation
from .harness import run
from .report import TraceFormatError, build_report
from .scenario import ScenarioError, ScenarioParseError, load_scenario, parse_scenario

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

ANONYMITY_TOLERANCE = Fraction(1, 10)


def bundled_scenarios() -> list[str]:
    root = resources.files("tfcp") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".tfcp"))


def _read_scenario(ref: str):
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if ref in bundled_scenarios():
        return parse_scenario((resources.files("tfcp") / "scenarios" / f"{ref}.tfcp").read_text())
    raise ScenarioError(f"no scenario file or bundled scenario named {ref!r}")


def _write(path: str | None, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    elif path:
        Path(path).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    try:
        scenario = _read_scenario(args.scenario)
    except ScenarioParseError as exc:
        print(f"{args.scenario}: parse error at line {exc.line}, column {exc.column}: {exc.message}",
              file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, OSError) as exc:
        print(f"{args.scenario}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = os.environ.get("TFCP_SEED", args.seed)
    if seed is not None:
        try:
            scenario = dataclasses.replace(scenario, seed=int(seed))
        except ValueError:
            print(f"seed must be an integer, got {seed!r}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        result = run(scenario)
    except ScenarioError as exc:
        print(f"{args.scenario}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    trace = result.trace_text()
    _write(args.trace, trace)
    report = build_report(trace).render()
    _write(args.report, report)
    if not args.report:
        sys.stdout.write(report)
    if result.problems:
        for problem in result.problems:
            print(f"invariant violated: {problem}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = Path(args.trace).read_text(encoding="utf-8")
        report = build_report(text)
    except (OSError, TraceFormatError) as exc:
        print(f"{args.trace}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write(args.out or "-", report.render())
    return EXIT_OK


def cmd_attacks(args) -> int:
    outcomes = run_attacks(args.which)
    width = max(len(c.name) for c in ATTACKS)
    print(f"{'attack':<{width}}  {'expected':<22}{'observed':<22}match")
    for o in outcomes:
        mark = "yes" if o.matched else "NO"
        print(f"{o.case.name:<{width}}  {o.case.expected:<22}{o.observed:<22}{mark}")
    for o in outcomes:
        print(f"attack|{o.case.name}|{o.case.expected}|{o.observed}|{int(o.matched)}")
    return EXIT_OK if all(o.matched for o in outcomes) else EXIT_FAILED


def cmd_anonymity(args) -> int:
    if args.donors < 1 or args.runs < 1:
        print("--runs and --donors must be positive", file=sys.stderr)
        return EXIT_CONFIG
    res = measure_anonymity(args.donors, args.runs, post_ack=args.post_ack, careless=args.careless)
    print(f"donors {res.donors}  runs {res.runs}")
    print(f"chance baseline 1/K           {float(res.baseline):.4f}")
    print(f"pre-acknowledgment rate       {float(res.pre_rate):.4f}")
    if res.post_rate is not None:
        print(f"post-acknowledgment rate      {float(res.post_rate):.4f}")
    if res.vacuous:
        print("note: a single donor makes every guess correct; the measurement is vacuous")
    ok = res.within_chance(ANONYMITY_TOLERANCE)
    print(f"anonymity|{res.donors}|{res.runs}|{res.pre_rate}|"
          f"{'' if res.post_rate is None else res.post_rate}|{int(res.vacuous)}|{int(ok)}")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file or bundled scenario")
    p.add_argument("scenario", help="path to a .tfcp file, or a bundled scenario name")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed (TFCP_SEED wins)")
    p.add_argument("--trace", metavar="OUT", help="write the trace here ('-' for stdout)")
    p.add_argument("--report", metavar="OUT", help="write the report here ('-' for stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="rebuild a run report from a trace file")
    p.add_argument("trace")
    p.add_argument("--out", metavar="OUT")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("attacks", help="run the attack catalog")
    p.add_argument("--which", choices=("key-transfer", "whale", "all"), default="all")
    p.set_defaults(func=cmd_attacks)

    p = sub.add_parser("anonymity", help="measure donor/deposit linkage against chance")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--donors", type=int, default=5)
    p.add_argument("--post-ack", action="store_true", help="also measure after acknowledgments")
    p.add_argument("--careless", action="store_true", help="donors fund their own deposits")
    p.set_defaults(func=cmd_anonymity)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
