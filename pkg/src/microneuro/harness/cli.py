"""Command-line entry point.

    microneuro run SCENARIO.yaml [--seed N] [--out DIR] [--format csv|json]
    microneuro suite {static6,dynamic,cair,biopsy,all} [...]

Exit status: 0 when every run meets its criteria, 1 when any run fails,
2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigError
from .runner import export_trace, run_scenario
from .scenario import builtin_scenario, load_scenario
from .suites import SUITES


EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def _report_line(rep) -> str:
    status = "PASS" if rep.success else "FAIL"
    parts = [f"{status} {rep.name}", f"steps={rep.steps}", f"terminal={_fmt(rep.terminal_error)}px"]
    if rep.settle_time_s is not None:
        parts.append(f"settle={rep.settle_time_s:.1f}s")
    if rep.waypoints_total:
        parts.append(f"waypoints={rep.waypoints_captured}/{rep.waypoints_total}")
        parts.append(f"rmse={_fmt(rep.capture_rmse)}px path_rmse={_fmt(rep.path_rmse)}px")
    if rep.recovery_steps is not None:
        parts.append(f"recovery={rep.recovery_steps}")
    if rep.period_s is not None:
        parts.append(f"period={_fmt(rep.period_s)}s")
    failed = [k for k, ok in rep.checks.items() if not ok]
    if failed:
        parts.append("failed=" + ",".join(failed))
    return " ".join(parts)


def _emit(results, args) -> int:
    ok = True
    for sc, trace, rep in results:
        print(_report_line(rep))
        ok &= rep.success
        if args.out:
            out = Path(args.out)
            export_trace(trace, out / f"{sc.name}.{args.format}", args.format)
            (out / f"{sc.name}.metrics.json").write_text(json.dumps(rep.as_dict(), indent=1, default=str) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    trace, rep = run_scenario(sc, dump_dir=args.dump_qp_failures)
    return _emit([(sc, trace, rep)], args)


def cmd_suite(args) -> int:
    names = list(SUITES) if args.name == "all" else [args.name]
    results = []
    for name in names:
        base = load_scenario(args.scenario) if args.scenario else builtin_scenario(name)
        results.extend(SUITES[name](base, seed=args.seed, dump_dir=args.dump_qp_failures))
    return _emit(results, args)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the plant RNG seed")
    common.add_argument("--out", default=None, help="directory for traces and metrics")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="trace file format")
    common.add_argument("--dump-qp-failures", metavar="PATH", default=None,
                        help="directory for QP dumps when a solve is infeasible or hits the iteration cap")

    p = argparse.ArgumentParser(prog="microneuro", description="Visual MPC scenario runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one scenario file")
    r.add_argument("scenario")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("suite", parents=[common], help="run a shipped experiment suite")
    s.add_argument("name", choices=sorted(SUITES) + ["all"])
    s.add_argument("--scenario", default=None, help="base scenario file instead of the shipped one")
    s.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.dump_qp_failures:
        Path(args.dump_qp_failures).mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
