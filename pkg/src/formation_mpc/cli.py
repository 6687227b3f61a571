"""Command-line front end.

    formation-mpc run <scenario> [--out DIR] [--mode centralized|decentralized]
                                 [--plot] [--quiet]
    formation-mpc validate <scenario>
    formation-mpc plot <csv> [--out DIR]

Exit codes: run returns 0 on a clean run, 2 when the run completed but
clearance violations occurred, 1 on configuration or IO errors. validate
returns 0 for a usable scenario (warnings included) and 1 for an invalid
one. plot returns 0 on success, 1 on unreadable input.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .exceptions import ConfigurationError
from .sim_harness import (CONTROL_MODES, load_scenario, read_trajectory_csv,
                          run_scenario, scenario_findings, write_metrics_json,
                          write_trajectory_csv)
from .plots import write_plots


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formation-mpc",
        description="Formation-flight MPC scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write outputs")
    run.add_argument("scenario", help="scenario TOML file")
    run.add_argument("--out", default=".", help="output directory (default: .)")
    run.add_argument("--mode", choices=CONTROL_MODES,
                     help="override the scenario's control mode")
    run.add_argument("--plot", action="store_true", help="also write SVG plots")
    run.add_argument("--quiet", action="store_true", help="suppress the summary")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario", help="scenario TOML file")

    plot = sub.add_parser("plot", help="regenerate plots from a trajectory CSV")
    plot.add_argument("csv", help="trajectory CSV written by run")
    plot.add_argument("--out", default=None,
                      help="output directory (default: alongside the CSV)")
    return parser


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.mode:
            scenario = dataclasses.replace(scenario, control_mode=args.mode)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    log, metrics = run_scenario(scenario)

    written = []
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(log, out / "trajectory.csv")
        written.append(out / "trajectory.csv")
        write_metrics_json(metrics, out / "metrics.json")
        written.append(out / "metrics.json")
        if args.plot:
            written.extend(write_plots(log, out))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if not args.quiet:
        for path in written:
            print(f"wrote {path}")
        for key, value in sorted(metrics.to_dict().items()):
            print(f"  {key}: {value}")
    return 2 if metrics.violation_count > 0 else 0


def _cmd_validate(args) -> int:
    try:
        errors, warnings = scenario_findings(args.scenario)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for err in errors:
        print(f"error: {err}")
    for note in warnings:
        print(f"warning: {note}")
    print(f"{len(warnings)} warnings")
    return 1 if errors else 0


def _cmd_plot(args) -> int:
    try:
        log = read_trajectory_csv(args.csv)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path(args.csv).parent
    try:
        for path in write_plots(log, out):
            print(f"wrote {path}")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_plot(args)


if __name__ == "__main__":
    sys.exit(main())
