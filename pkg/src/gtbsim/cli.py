"""Command-line entry point: ``gtbsim {run,grid,aggregate,plot-data,layout-dump}``.

Exit codes: 0 success, 1 usage error, 2 run failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .config import BAND, UNIFORM, ConfigError
from .experiments import (
    TRAIN,
    AggregateError,
    RunSpec,
    cmd_aggregate,
    cmd_grid,
    cmd_plotdata,
    cmd_run,
    load_experiment,
    parse_cell,
)
from .metrics import OBJECTIVES
from .world import generate_layout

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
SEED_ENV = "GTBSIM_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gtbsim", description="Gather-trade-build economy with a tax-setting planner.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="experiment or scenario YAML file")
        sp.add_argument("--seed", type=int, help=f"root seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory")

    run = sub.add_parser("run", help="train or script one run, then play an evaluation episode")
    common(run)
    run.add_argument("--env", choices=(BAND, UNIFORM), help="layout kind (default from config)")
    run.add_argument("--objective", choices=OBJECTIVES, help="planner objective (default from config)")
    run.add_argument("--agents", help=f"'{TRAIN}' or a scripted policy: noop, random, gatherer_builder")
    run.add_argument("--checkpoint", type=Path, help="skip training and load this checkpoint")
    run.add_argument("--stochastic", action="store_true", help="sample the evaluation episode")

    grid = sub.add_parser("grid", help="run the environment x objective grid (8 cells)")
    common(grid)
    grid.add_argument("--cell", action="append", metavar="ENVxOBJ",
                      help="run only this cell, e.g. bandxequality (repeatable)")
    grid.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")

    agg = sub.add_parser("aggregate", help="pool run directories per environment")
    agg.add_argument("runs", nargs="*", type=Path, help="run directories")
    agg.add_argument("--grid", type=Path, help="grid directory; adds its successful runs")
    agg.add_argument("--out", type=Path, required=True)

    pd = sub.add_parser("plot-data", help="emit tidy per-figure CSVs from an aggregate report")
    pd.add_argument("report", type=Path)
    pd.add_argument("--out", type=Path, required=True)

    ld = sub.add_parser("layout-dump", help="print the generated map, one character per cell")
    common(ld, out_required=False)
    ld.add_argument("--env", choices=(BAND, UNIFORM))
    return p


def _grid_runs(grid_dir: Path) -> list[Path]:
    with open(grid_dir / "grid.csv", newline="") as f:
        return [grid_dir / row["run_dir"] for row in csv.DictReader(f) if row["status"] == "ok"]


def dispatch(args) -> int:
    if args.command == "run":
        exp = load_experiment(args.config)
        if args.agents:
            exp.agents = args.agents
        if args.stochastic:
            exp.greedy = False
        spec = RunSpec(args.env or exp.scenario.layout.kind, args.objective or exp.scenario.objective,
                       _seed(args), args.out, exp, args.checkpoint)
        print(cmd_run(spec))
        return EXIT_OK
    if args.command == "grid":
        if args.parallel < 1:
            raise UsageError("--parallel must be >= 1")
        for cell in args.cell or []:
            try:
                parse_cell(cell)
            except ConfigError as exc:
                raise UsageError(str(exc)) from None
        rows = cmd_grid(load_experiment(args.config), _seed(args), args.out, args.cell, args.parallel)
        for r in rows:
            print(f"{r['index']:>2} {r['environment']:<8} {r['objective']:<15} {r['status']}")
        return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_FAILURE
    if args.command == "aggregate":
        runs = list(args.runs) + (_grid_runs(args.grid) if args.grid else [])
        if not runs:
            raise UsageError("no run directories given")
        print(cmd_aggregate(runs, args.out))
        return EXIT_OK
    if args.command == "plot-data":
        print(cmd_plotdata(args.report, args.out))
        return EXIT_OK
    if args.command == "layout-dump":
        cfg = load_experiment(args.config).scenario
        if args.env:
            cfg.layout.kind = args.env
            cfg.layout.regen_counts = None
        text = generate_layout(cfg.validate(), _seed(args)).dump()
        if args.out:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    raise UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"gtbsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, AggregateError, OSError, ValueError) as exc:
        print(f"gtbsim: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
