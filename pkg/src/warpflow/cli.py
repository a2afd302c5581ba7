"""Command-line entry points.

  warpflow run CONFIG [CONFIG ...] [--out DIR] [--h H] [--t-end T] [--jobs N]
  warpflow twin CONFIG [--delta D] [--out DIR]
  warpflow check REPORT.json

CONFIG is a config file path or the name of a shipped scenario.  Exit codes:
0 success, 1 config error, 2 diagnostic check failure, 3 solver error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import ConfigParseError, WarpflowError
from .scenario import (builtin_scenarios, check_report_file, default_out_root,
                       resolve_config, run_scenario, twin_run)


def _run_one(args_tuple):
    name, out_dir, h, t_end = args_tuple
    flat = resolve_config(name)
    result = run_scenario(flat, out_dir=out_dir, h=h, t_end=t_end)
    rec = result.report.records
    summary = (f"{result.config.name}: steps={result.state.step_count} "
               f"E_g={rec[-1].e_g:.6g} events={len(result.report.events)} "
               f"exit={result.exit_code} -> {result.out_dir}")
    return result.exit_code, summary


def _cmd_run(args) -> int:
    root = Path(args.out) if args.out else default_out_root()
    jobs = []
    for name in args.config:
        out_dir = root / Path(name).stem if len(args.config) > 1 or args.out is None \
            else Path(args.out)
        jobs.append((name, out_dir, args.h, args.t_end))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    code = 0
    for rc, summary in results:
        print(summary)
        code = max(code, rc)
    return code


def _cmd_twin(args) -> int:
    flat = resolve_config(args.config)
    result = twin_run(flat, delta=args.delta)
    out = Path(args.out) if args.out else default_out_root() / f"{Path(args.config).stem}_twin"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "twin_report.json", "w") as f:
        json.dump(result.to_dict(), f, indent=2, sort_keys=True)
    print(f"delta={result.delta:.6g} initial={result.initial_diff:.6g} "
          f"sup={result.sup_diff:.6g} amplification={result.amplification:.6g}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="warpflow",
        description="Harmonic map flow into warped-product Lorentzian targets")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one or more scenarios")
    p_run.add_argument("config", nargs="+",
                       help=f"config path or shipped scenario: {', '.join(builtin_scenarios())}")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--h", type=float, default=None, help="override mesh size")
    p_run.add_argument("--t-end", type=float, default=None, help="override end time")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="run independent scenarios concurrently")

    p_twin = sub.add_parser("twin", help="perturbed twin run")
    p_twin.add_argument("config")
    p_twin.add_argument("--delta", type=float, default=None,
                        help="perturbation size (default: twin.delta from config)")
    p_twin.add_argument("--out", default=None)

    p_check = sub.add_parser("check", help="re-evaluate a stored report")
    p_check.add_argument("report")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "twin":
            return _cmd_twin(args)
        return check_report_file(args.report)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except WarpflowError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
