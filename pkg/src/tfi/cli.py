"""Command line entry point: ``tfi run``, ``tfi sweep`` and ``tfi list-presets``."""
from __future__ import annotations

import argparse
import inspect
import os
import sys
from dataclasses import replace
from typing import Sequence

from .config import PRESETS, ConfigError, load_config
from .runner import EXIT_ERROR, parse_values, run_scenarios, run_sweep

SEED_ENV = "TFI_SEED"
DEFAULT_OUT = "results"


def _seed_override() -> int | None:
    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == "":
        return None
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError([f"{SEED_ENV}={value!r} is not an integer"]) from None
    if seed < 0:
        raise ConfigError([f"{SEED_ENV} must be non-negative"])
    return seed


def _load(path: str):
    seed = _seed_override()
    return [c.with_seed(seed) if c.kind == "langevin" else c for c in load_config(path)]


def _report(summaries, status: int, out) -> None:
    for s in summaries:
        line = f"{s.status.upper():5s} {s.id} ({s.kind}, {s.wall_time:.2f}s)"
        if s.error:
            line += f": {s.error}"
        print(line, file=out)
        for c in s.checks:
            mark = "ok" if c["passed"] else "VIOLATED"
            print(f"    {mark:8s} {c['name']}: slack {c['slack']:.3e} (tol {c['tolerance']:.1e})", file=out)
    print(f"exit status {status}", file=out)


def cmd_run(args: argparse.Namespace) -> int:
    configs = _load(args.config)
    if args.out is None:
        configs = [c if c.output_dir else replace(c, output_dir=DEFAULT_OUT) for c in configs]
        if not configs:
            args.out = DEFAULT_OUT
    summaries, status = run_scenarios(configs, args.jobs, args.out)
    _report(summaries, status, sys.stdout)
    return status


def cmd_sweep(args: argparse.Namespace) -> int:
    configs = _load(args.config)
    values = parse_values(args.values)
    table, summaries, status = run_sweep(configs, args.param, values, args.jobs, args.out)
    _report(summaries, status, sys.stdout)
    print(f"{len(table['scenario'])} sweep rows written to {os.path.join(args.out, 'sweep.csv')}")
    return status


def cmd_list_presets(args: argparse.Namespace) -> int:
    for kind, table in PRESETS.items():
        print(kind)
        for name, (factory, params) in sorted(table.items()):
            sig = inspect.signature(factory)
            shown = []
            for p in params:
                default = sig.parameters[p].default
                shown.append(p if default is inspect.Parameter.empty else f"{p}={default}")
            print(f"    {name}({', '.join(shown)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfi", description="Run speed-limit verification scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every scenario in a config file")
    run.add_argument("config", help="TOML or JSON scenario file")
    run.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel (default 1)")
    run.add_argument("--out", default=None, help="output directory (default: each scenario's output_dir, else ./results)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="rerun the config for several values of one parameter")
    sweep.add_argument("config")
    sweep.add_argument("--param", required=True, help="dotted parameter path, e.g. model.g or dt")
    sweep.add_argument("--values", required=True, help="comma separated values, e.g. 0.5,1,2")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default="results")
    sweep.set_defaults(func=cmd_sweep)

    presets = sub.add_parser("list-presets", help="list model presets per scenario kind")
    presets.set_defaults(func=cmd_list_presets)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for issue in exc.issues:
            print(f"  {issue}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
