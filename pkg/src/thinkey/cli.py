"""Command-line interface: scenario runs, workload generation, analytics.

Exit codes: 0 success, 2 invalid configuration, and one distinct code per
violation class detected during a run (3 safety, 4 conservation, 5 double
execution, 6 processing order, 7 stall or other invariant).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from .analysis import report_rows_to_csv, speedup, speedup_scalability
from .committee import FailureParams, failure_probability, system_failure_bound
from .runner import run_scenario
from .scenario import Scenario, ScenarioError
from .workload import gen_workload, make_accounts, read_workload, write_workload

EXIT_CODES = {
    "config": 2,
    "safety": 3,
    "conservation": 4,
    "double-execution": 5,
    "order": 6,
    "stall": 7,
}


def _apply_seed_override(scenario: Scenario) -> Scenario:
    env_seed = os.environ.get("THINKEY_SEED")
    if env_seed is not None:
        scenario.seed = int(env_seed)
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = Scenario.from_json(Path(args.scenario).read_text())
    except (OSError, ValueError, ScenarioError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    _apply_seed_override(scenario)
    workload = read_workload(scenario.workload_file) if scenario.workload_file else None

    result = run_scenario(scenario, workload)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(report_rows_to_csv([result.report_row()]))
    (out_dir / "manifest.json").write_text(
        json.dumps(result.manifest(), sort_keys=True, indent=2) + "\n"
    )
    with (out_dir / "trace.jsonl").open("w") as fh:
        for record in result.engine_log:
            fh.write(record.to_json() + "\n")
    with (out_dir / "relay_trace.jsonl").open("w") as fh:
        for row in result.relay_trace:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")

    print(f"rounds={result.rounds_total} empty={result.empty_rounds} "
          f"settled={result.settled} duration_ms={result.duration_ms:.0f}")
    if result.summary:
        print(f"tps={result.summary.tps:.1f} "
              f"mean_confirm_ms={result.summary.mean_confirm_ms:.0f}")
    if result.violations:
        for violation in result.violations:
            print(f"VIOLATION [{violation.code}] {violation.detail}", file=sys.stderr)
        report = [{"code": v.code, "detail": v.detail} for v in result.violations]
        (out_dir / "violations.json").write_text(json.dumps(report, indent=2))
        return EXIT_CODES.get(result.violations[0].code, 7)
    return 0


def cmd_gen_workload(args) -> int:
    addresses = make_accounts(args.accounts, args.shards)
    rows = gen_workload(addresses, args.tx_count, args.cross_chain_ratio,
                        args.seed, args.shards)
    write_workload(rows, args.out)
    cross = sum(1 for r in rows if r.is_cross(args.shards))
    print(f"wrote {len(rows)} txs ({cross} cross-chain) to {args.out}")
    return 0


def cmd_analyze_committee(args) -> int:
    try:
        params = FailureParams(
            total_nodes=args.N,
            committee_size=args.n,
            committee_count=args.m,
            malicious_fraction=Fraction(args.lam),
            tolerance=Fraction(args.rho),
        )
    except (ValueError, ZeroDivisionError) as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    p_single = failure_probability(params)
    p_system = system_failure_bound(args.m, p_single)
    print(json.dumps({
        "p_single": float(p_single),
        "p_single_exact": f"{p_single.numerator}/{p_single.denominator}",
        "p_system_bound": float(p_system),
    }, indent=2))
    return 0


def cmd_analyze_speedup(args) -> int:
    try:
        value = speedup(args.p, args.k, args.r, args.f)
        psi = speedup_scalability(args.p, args.k, args.r, args.f)
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    print(json.dumps({"speedup": value, "scalability_approx": psi}, indent=2))
    return 0


def cmd_summarize(args) -> int:
    rows = []
    with open(args.infile) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    report_rows = [r for r in rows if r.get("kind") == "report" or "tps" in r]
    if not report_rows:
        print("no report rows found in trace", file=sys.stderr)
        return EXIT_CODES["config"]
    csv_text = report_rows_to_csv(
        [r.get("detail", r) for r in report_rows]
    )
    Path(args.out).write_text(csv_text)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinkey",
        description="Double-layer sharded blockchain simulator and analytics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file (or manifest)")
    p_run.add_argument("scenario")
    p_run.add_argument("--out-dir", default="out")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-workload", help="generate a signed payment workload")
    p_gen.add_argument("--accounts", type=int, default=2000)
    p_gen.add_argument("--tx-count", type=int, default=10000)
    p_gen.add_argument("--cross-chain-ratio", type=float, default=0.2)
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.add_argument("--shards", type=int, default=4)
    p_gen.add_argument("--out", default="workload.jsonl")
    p_gen.set_defaults(func=cmd_gen_workload)

    p_analyze = sub.add_parser("analyze", help="closed-form analytics")
    analyze_sub = p_analyze.add_subparsers(dest="what", required=True)

    p_committee = analyze_sub.add_parser("committee", help="committee failure bounds")
    p_committee.add_argument("--N", type=int, required=True)
    p_committee.add_argument("--n", type=int, required=True)
    p_committee.add_argument("--m", type=int, default=1)
    p_committee.add_argument("--lambda", dest="lam", default="0.25",
                             help="malicious stake fraction, e.g. 0.25 or 1/4")
    p_committee.add_argument("--rho", default="1/3",
                             help="per-committee tolerance, e.g. 1/3")
    p_committee.set_defaults(func=cmd_analyze_committee)

    p_speedup = analyze_sub.add_parser("speedup", help="budget-split speedup")
    p_speedup.add_argument("--p", type=float, required=True)
    p_speedup.add_argument("--k", type=float, required=True)
    p_speedup.add_argument("--r", type=float, required=True)
    p_speedup.add_argument("--f", choices=["sqrt", "log"], default="sqrt")
    p_speedup.set_defaults(func=cmd_analyze_speedup)

    p_sum = sub.add_parser("summarize", help="reduce a trace to report.csv")
    p_sum.add_argument("--in", dest="infile", required=True)
    p_sum.add_argument("--out", default="report.csv")
    p_sum.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
