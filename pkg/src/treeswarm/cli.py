"""Command-line interface: single runs, batch sweeps, parameter checks, reports."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import report as report_mod
from .core import AlgorithmVariant, default_params, load_params
from .scenario import (CSV_COLUMNS, Scenario, Simulation, expand_grid, load_grid,
                       result_row, sweep)

log = logging.getLogger("treeswarm")


def _parse_seeds(text: str) -> list[int]:
    """Either a single seed or an inclusive range 'a..b'."""
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def _scenario_from_args(args) -> Scenario:
    variant = AlgorithmVariant.parse(args.variant)
    params = load_params(args.params, base=default_params(variant)) if args.params else None
    return Scenario(
        variant=variant, n_targets=args.targets, target_radius=args.radius,
        redundancy=args.redundancy, los_enabled=args.los, seed=args.seed,
        n_robots=args.robots, params=params,
    )


def cmd_run(args) -> int:
    scenario = _scenario_from_args(args)
    trace = open(args.trace, "w") if args.trace else None
    msg_trace = open(args.msg_trace, "w") if args.msg_trace else None
    try:
        sim = Simulation(scenario, fiedler_every=args.fiedler_every,
                         trace=trace, msg_trace=msg_trace)
        res = sim.run()
    finally:
        for fh in (trace, msg_trace):
            if fh:
                fh.close()
    row = result_row(res)
    out = sys.stdout if args.out is None else open(args.out, "w")
    try:
        out.write(",".join(CSV_COLUMNS) + "\n")
        out.write(",".join(row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0 if res.valid else 1


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid)
    seeds = _parse_seeds(args.seeds)
    scenarios = expand_grid(grid, seeds)
    log.info("sweep: %d runs (%d jobs)", len(scenarios), args.jobs)
    with open(args.out, "w") as fh:
        rows = sweep(scenarios, jobs=args.jobs, fiedler_every=args.fiedler_every, out=fh)
    invalid = sum(1 for r in rows if r[7] == "INVALID")
    if invalid:
        log.warning("%d invalid rows", invalid)
    return 1 if (invalid and args.strict) else 0


def cmd_validate_params(args) -> int:
    try:
        params = load_params(args.file)
    except ValueError as exc:
        print(f"INVALID: {exc}")
        return 1
    warnings = params.validate()
    for w in warnings:
        print(f"WARNING: {w}")
    print("OK" if not warnings else f"OK with {len(warnings)} warning(s)")
    return 0


def cmd_report(args) -> int:
    written = report_mod.report(args.results, args.outdir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeswarm",
                                     description="Tree-backbone swarm deployment simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a single scenario")
    run_p.add_argument("--variant", required=True, choices=["outwards", "inwards"])
    run_p.add_argument("--targets", type=int, default=2)
    run_p.add_argument("--radius", type=float, default=2.3)
    run_p.add_argument("--redundancy", type=int, default=2)
    run_p.add_argument("--robots", type=int, default=None,
                       help="override the derived robot count")
    run_p.add_argument("--los", action="store_true", help="enable line-of-sight occlusion")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--params", type=Path, default=None, help="parameter file")
    run_p.add_argument("--trace", type=Path, default=None,
                       help="per-tick protocol/force dump (JSON lines)")
    run_p.add_argument("--msg-trace", type=Path, default=None,
                       help="per-delivery message log (JSON lines)")
    run_p.add_argument("--fiedler-every", type=int, default=1)
    run_p.add_argument("--out", type=Path, default=None, help="write the CSV row here")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a scenario grid over many seeds")
    sweep_p.add_argument("--grid", type=Path, required=True, help="JSON grid file")
    sweep_p.add_argument("--seeds", type=str, default="0..49", help="seed or inclusive range a..b")
    sweep_p.add_argument("--jobs", type=int, default=1)
    sweep_p.add_argument("--fiedler-every", type=int, default=1)
    sweep_p.add_argument("--out", type=Path, required=True)
    sweep_p.add_argument("--strict", action="store_true",
                         help="exit nonzero if any run is invalid")
    sweep_p.set_defaults(func=cmd_sweep)

    val_p = sub.add_parser("validate-params", help="check a parameter file")
    val_p.add_argument("file", type=Path)
    val_p.set_defaults(func=cmd_validate_params)

    rep_p = sub.add_parser("report", help="aggregate a sweep CSV into figures")
    rep_p.add_argument("--results", type=Path, required=True)
    rep_p.add_argument("--outdir", type=Path, default=Path("figures"))
    rep_p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
