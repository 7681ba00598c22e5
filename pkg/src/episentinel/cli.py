"""Command-line interface for the simulation-to-alerting pipeline.

Every subcommand resolves a RunConfig (file, then flag overrides), then
runs its stage plus any missing prerequisites, reusing artifacts already
present in the output directory. Stage failures print a one-line JSON
error object to stderr and exit with the stage's code.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigurationError, SentinelError
from .metrics import METRIC_NAMES
from .pipeline import (
    FORMATS,
    read_per_year_table,
    run_pipeline,
    stage_epidemic,
    stage_evaluate,
    stage_figures,
    stage_population,
    stage_surveillance,
    emit_figures,
)

_COMMANDS = (
    ("simulate-population", "simulate the synthetic population"),
    ("simulate-epidemic", "simulate epidemic replicates over the population"),
    ("compile", "compile the daily school-absenteeism surveillance table"),
    ("evaluate", "run the (lag x threshold) alert-tuning grid"),
    ("plot", "write the epidemic and alert SVG figures"),
    ("run", "run the full pipeline end to end"),
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", metavar="DIR", help="artifact directory (default from config)")
    common.add_argument(
        "--threads",
        type=int,
        help="worker count (default: SENTINEL_THREADS, then the config)",
    )
    common.add_argument(
        "--format",
        choices=FORMATS,
        default="csv",
        dest="fmt",
        help="table format for the surveillance artifact",
    )
    parser = argparse.ArgumentParser(
        prog="episentinel",
        description="Simulate epidemics over synthetic school populations and "
        "tune absenteeism-based alarm systems.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        if name == "plot":
            sub.add_argument(
                "--year",
                type=int,
                help="school year to plot (default: 4 when available)",
            )
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.master_seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    config.validate()
    return config


def resolve_threads(args: argparse.Namespace, config: RunConfig) -> int:
    if args.threads is not None:
        value = args.threads
    elif os.environ.get("SENTINEL_THREADS"):
        raw = os.environ["SENTINEL_THREADS"]
        try:
            value = int(raw)
        except ValueError:
            raise ConfigurationError(
                f"SENTINEL_THREADS must be an integer (got {raw!r})", stage="config"
            ) from None
    else:
        value = config.threads
    if value < 1:
        raise ConfigurationError(f"threads must be >= 1 (got {value})", stage="config")
    return value


def _dispatch(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    threads = resolve_threads(args, config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    command = args.command

    if command == "simulate-population":
        population = stage_population(config, out)
        print(
            f"population: {population.n_individuals} individuals, "
            f"{population.n_students} students -> {out / 'population'}"
        )
        return 0

    if command == "simulate-epidemic":
        population = stage_population(config, out)
        series = stage_epidemic(config, out, population, threads=threads)
        attack = sum(s.total_infected() for s in series) / (
            len(series) * population.n_individuals
        )
        print(
            f"epidemic: {len(series)} replicates over N={population.n_individuals}, "
            f"mean attack rate {attack:.4f} -> {out / 'epidemic.csv'}"
        )
        return 0

    if command == "compile":
        population = stage_population(config, out)
        series = stage_epidemic(config, out, population, threads=threads)
        dataset = stage_surveillance(config, out, population, series, fmt=args.fmt)
        print(
            f"surveillance: {dataset.n_rows} rows x {len(dataset.columns)} columns "
            f"-> {out / ('surveillance.' + args.fmt)}"
        )
        return 0

    if command == "evaluate":
        population = stage_population(config, out)
        series = stage_epidemic(config, out, population, threads=threads)
        dataset = stage_surveillance(config, out, population, series, fmt=args.fmt)
        grid = stage_evaluate(config, out, dataset, threads=threads)
        for name in METRIC_NAMES:
            lag, threshold, minimum = grid.best[name]
            print(f"{name}: optimal lag {lag}, optimal threshold {threshold}, minimum {minimum:.4f}")
        print(f"artifacts -> {out / 'metrics'}, {out / 'alert_summary.json'}, {out / 'per_year.csv'}")
        return 0

    if command == "plot":
        population = stage_population(config, out)
        series = stage_epidemic(config, out, population, threads=threads)
        dataset = stage_surveillance(config, out, population, series, fmt=args.fmt)
        per_year = out / "per_year.csv"
        if per_year.exists():
            refs, first_alerts, evaluable = read_per_year_table(per_year)
            paths = emit_figures(
                out, series, dataset, refs, first_alerts, evaluable, year=args.year
            )
        else:
            grid = stage_evaluate(config, out, dataset, threads=threads)
            paths = stage_figures(out, series, dataset, grid, year=args.year)
        for path in paths:
            print(f"figure -> {path}")
        return 0

    if command == "run":
        result = run_pipeline(config, out_dir=out, threads=threads, fmt=args.fmt)
        for name in METRIC_NAMES:
            lag, threshold, minimum = result.grid.best[name]
            print(f"{name}: optimal lag {lag}, optimal threshold {threshold}, minimum {minimum:.4f}")
        for path in result.paths:
            print(f"artifact -> {path}")
        return 0

    raise ConfigurationError(f"unknown command {command!r}", stage="config")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except SentinelError as err:
        print(json.dumps(err.describe(), sort_keys=True), file=sys.stderr)
        return err.exit_code
    except OSError as err:
        payload = {
            "error": type(err).__name__,
            "message": str(err),
            "stage": "io",
            "exit_code": 5,
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
