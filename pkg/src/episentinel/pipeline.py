"""End-to-end orchestration: population, epidemics, surveillance, tuning.

Each stage reads its artifact from the output directory when present and
otherwise computes and writes it, so the subcommands compose: a directory
produced by one invocation seeds the next. All randomness flows through
streams derived from (master_seed, stage label), and worker pools only
ever map pure functions over pre-derived streams, so outputs are byte
identical at any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tableio
from .config import RunConfig
from .epidemic import (
    EpidemicSeries,
    epidemic_summary,
    read_epidemic_csv,
    simulate_one,
    write_epidemic_csv,
)
from .errors import ConfigurationError
from .figures import emit_alert_figure, emit_epidemic_figure
from .metrics import METRIC_NAMES, MetricGrid, evaluate_grid
from .population import PopulationFrame, simulate_population
from .stochastics import RngStream
from .surveillance import SurveillanceDataset, compile_dataset

FORMATS = ("csv", "json")


@dataclass
class PipelineResult:
    """In-memory handles plus the paths of everything written."""

    population: PopulationFrame
    epidemics: list[EpidemicSeries]
    surveillance: SurveillanceDataset
    grid: MetricGrid
    paths: list[Path] = field(default_factory=list)


def _check_format(fmt: str) -> str:
    if fmt not in FORMATS:
        raise ConfigurationError(f"format must be one of {FORMATS} (got {fmt!r})", stage="config")
    return fmt


def stage_population(config: RunConfig, out_dir: Path) -> PopulationFrame:
    """Simulate (or reload) the synthetic population."""
    pop_dir = out_dir / "population"
    if (pop_dir / "individuals.csv").exists():
        return PopulationFrame.read_csvs(pop_dir)
    population = simulate_population(
        config.population, RngStream(config.master_seed, "population")
    )
    population.write_csvs(pop_dir)
    return population


def stage_epidemic(
    config: RunConfig, out_dir: Path, population: PopulationFrame, threads: int = 1
) -> list[EpidemicSeries]:
    """Simulate (or reload) all epidemic replicates and write the summary."""
    path = out_dir / "epidemic.csv"
    params = config.epidemic.to_params(population.n_individuals)
    params.validate()
    if path.exists():
        series = read_epidemic_csv(path, config.epidemic.inf_period)
    else:
        stream = RngStream(config.master_seed, "epidemic")
        # children are derived up front; the pool maps a pure function
        jobs = [(r, stream.child(f"rep-{r}")) for r in range(1, params.rep + 1)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                series = list(pool.map(lambda job: simulate_one(params, job[1], job[0]), jobs))
        else:
            series = [simulate_one(params, s, r) for r, s in jobs]
        write_epidemic_csv(series, path)
    tableio.write_json(out_dir / "epidemic_summary.json", epidemic_summary(series))
    return series


def stage_surveillance(
    config: RunConfig,
    out_dir: Path,
    population: PopulationFrame,
    epidemics: list[EpidemicSeries],
    fmt: str = "csv",
) -> SurveillanceDataset:
    """Compile (or reload) the daily absenteeism table."""
    path = out_dir / f"surveillance.{_check_format(fmt)}"
    if path.exists():
        if fmt == "csv":
            return SurveillanceDataset.read_csv(path)
        return SurveillanceDataset.read_json(path)
    # the other format still seeds this stage; convert rather than recompile
    other = out_dir / ("surveillance.json" if fmt == "csv" else "surveillance.csv")
    if other.exists():
        dataset = (
            SurveillanceDataset.read_json(other)
            if fmt == "csv"
            else SurveillanceDataset.read_csv(other)
        )
        if fmt == "csv":
            dataset.write_csv(path)
        else:
            dataset.write_json(path)
        return dataset
    dataset = compile_dataset(
        epidemics,
        population,
        config.surveillance,
        RngStream(config.master_seed, "surveillance"),
        case_from=config.case_from,
    )
    if fmt == "csv":
        dataset.write_csv(path)
    else:
        dataset.write_json(path)
    return dataset


def _matrix_table(grid: MetricGrid, name: str) -> tuple[list[str], dict]:
    columns = ["lag"] + [tableio.format_cell(t) for t in grid.thresholds]
    data: dict = {"lag": np.asarray(grid.lags, dtype=np.int64)}
    for j, t in enumerate(grid.thresholds):
        data[tableio.format_cell(t)] = grid.matrices[name][:, j]
    return columns, data


def write_grid_artifacts(grid: MetricGrid, out_dir: Path) -> list[Path]:
    """Metric matrices, the summary JSON, and the per-year alert table."""
    paths = []
    for name in METRIC_NAMES:
        path = out_dir / "metrics" / f"{name.lower()}.csv"
        columns, data = _matrix_table(grid, name)
        tableio.write_csv(path, columns, data)
        paths.append(path)
    summary = {
        "metrics": grid.summary(),
        "evaluable_years": list(grid.evaluable_years),
        "weights": {str(y): w for y, w in grid.weights.items()},
        "failed_cells": [[lag, t] for lag, t in sorted(grid.failed_cells)],
    }
    summary_path = out_dir / "alert_summary.json"
    tableio.write_json(summary_path, tableio.json_safe(summary))
    paths.append(summary_path)
    rows = grid.per_year_rows()
    columns = ["year", "ref_date", *METRIC_NAMES]
    table = {
        c: ["NA" if row[c] is None else row[c] for row in rows] for c in columns
    }
    per_year_path = out_dir / "per_year.csv"
    tableio.write_csv(per_year_path, columns, table)
    paths.append(per_year_path)
    return paths


def stage_evaluate(
    config: RunConfig, out_dir: Path, dataset: SurveillanceDataset, threads: int = 1
) -> MetricGrid:
    """Run the tuning grid and write its artifacts."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grid = evaluate_grid(
                dataset,
                thresholds=config.evaluation.thresholds,
                maxlag=config.effective_maxlag(),
                params=config.evaluation.metric,
                parallel_map=pool.map,
            )
    else:
        grid = evaluate_grid(
            dataset,
            thresholds=config.evaluation.thresholds,
            maxlag=config.effective_maxlag(),
            params=config.evaluation.metric,
        )
    write_grid_artifacts(grid, out_dir)
    return grid


def read_per_year_table(
    path: str | Path,
) -> tuple[dict[int, int | None], dict[str, dict[int, int | None]], tuple[int, ...]]:
    """Load per_year.csv back into (refs, first alerts per metric, evaluable)."""
    header, rows = tableio.read_csv(path)
    expected = ["year", "ref_date", *METRIC_NAMES]
    if header != expected:
        raise ConfigurationError(f"{path}: expected columns {expected}, got {header}")

    def cell(row, name):
        value = row[header.index(name)]
        return None if value == "NA" else int(value)

    refs: dict[int, int | None] = {}
    first_alerts: dict[str, dict[int, int | None]] = {n: {} for n in METRIC_NAMES}
    years = []
    for row in rows:
        year = int(row[0])
        years.append(year)
        refs[year] = cell(row, "ref_date")
        for name in METRIC_NAMES:
            first_alerts[name][year] = cell(row, name)
    evaluable = tuple(y for y in years[1:] if refs[y] is not None)
    return refs, first_alerts, evaluable


def pick_epidemic_figure_year(epidemics: list[EpidemicSeries], year: int | None = None) -> EpidemicSeries:
    """Replicate 4 by convention, else the first; explicit year wins."""
    by_id = {s.replicate_id: s for s in epidemics}
    if year is not None:
        if year not in by_id:
            raise ConfigurationError(f"no epidemic replicate {year}", stage="plot")
        return by_id[year]
    return by_id.get(4, epidemics[0])


def pick_alert_figure_year(evaluable: tuple[int, ...], year: int | None = None) -> int:
    """Year 4 when evaluable, else the first evaluable year; explicit wins."""
    if year is not None:
        if year not in evaluable:
            raise ConfigurationError(
                f"year {year} has no evaluable alerts (evaluable: {list(evaluable)})",
                stage="plot",
            )
        return year
    if 4 in evaluable:
        return 4
    return evaluable[0]


def emit_figures(
    out_dir: Path,
    epidemics: list[EpidemicSeries],
    dataset: SurveillanceDataset,
    refs: dict[int, int | None],
    first_alerts: dict[str, dict[int, int | None]],
    evaluable: tuple[int, ...],
    year: int | None = None,
) -> list[Path]:
    """Write the epidemic-curve and alert-timeline figures."""
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    epi_path = fig_dir / "epidemic.svg"
    emit_epidemic_figure(pick_epidemic_figure_year(epidemics, year), epi_path)
    alert_year = pick_alert_figure_year(evaluable, year)
    alert_days = {name: first_alerts[name].get(alert_year) for name in METRIC_NAMES}
    alert_path = fig_dir / "alerts.svg"
    emit_alert_figure(dataset.year_slice(alert_year), alert_days, refs[alert_year], alert_path)
    return [epi_path, alert_path]


def stage_figures(
    out_dir: Path,
    epidemics: list[EpidemicSeries],
    dataset: SurveillanceDataset,
    grid: MetricGrid,
    year: int | None = None,
) -> list[Path]:
    return emit_figures(
        out_dir, epidemics, dataset, grid.refs, grid.first_alerts, grid.evaluable_years, year
    )


def run_pipeline(
    config: RunConfig,
    out_dir: str | Path | None = None,
    threads: int | None = None,
    fmt: str = "csv",
) -> PipelineResult:
    """Execute every stage in order and return the in-memory results."""
    config.validate()
    _check_format(fmt)
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    workers = config.threads if threads is None else int(threads)
    if workers < 1:
        raise ConfigurationError(f"threads must be >= 1 (got {workers})", stage="config")
    out.mkdir(parents=True, exist_ok=True)
    population = stage_population(config, out)
    epidemics = stage_epidemic(config, out, population, threads=workers)
    dataset = stage_surveillance(config, out, population, epidemics, fmt=fmt)
    grid = stage_evaluate(config, out, dataset, threads=workers)
    figure_paths = stage_figures(out, epidemics, dataset, grid)
    paths = [
        out / "population" / "catchments.csv",
        out / "population" / "schools.csv",
        out / "population" / "households.csv",
        out / "population" / "individuals.csv",
        out / "epidemic.csv",
        out / "epidemic_summary.json",
        out / f"surveillance.{fmt}",
        *[out / "metrics" / f"{n.lower()}.csv" for n in METRIC_NAMES],
        out / "alert_summary.json",
        out / "per_year.csv",
        *figure_paths,
    ]
    return PipelineResult(
        population=population,
        epidemics=epidemics,
        surveillance=dataset,
        grid=grid,
        paths=paths,
    )
