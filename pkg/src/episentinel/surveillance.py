"""Daily school-absenteeism surveillance dataset compilation.

Bridges population-level epidemic counts to student-level absences: each
day's new infections are allocated uniformly over the currently susceptible
individuals, infected students are absent with probability ``p_sick`` while
infectious, everyone else with the baseline ``p_base``. One block of T rows
per school year (= epidemic replicate) is emitted with seasonal harmonics,
lagged absenteeism features, and true-alarm window / reference-date flags.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epidemic import EpidemicSeries
from .errors import ConfigurationError, InvalidParameterError, SimulationError
from .population import PopulationFrame
from .stochastics import RngStream
from . import tableio

#: Fixed (non-lag) columns, in file order. Lag columns follow: lag0..lag{maxlag}.
BASE_COLUMNS = (
    "Date",
    "ScYr",
    "pct_absent",
    "absent",
    "absent_sick",
    "new_inf",
    "reported_cases",
    "Case",
    "sinterm",
    "costerm",
    "window",
    "ref_date",
)

_INT_COLUMNS = frozenset(
    {"Date", "ScYr", "absent", "absent_sick", "new_inf", "reported_cases", "Case", "window", "ref_date"}
)

CASE_SOURCES = ("reported", "new_inf")


@dataclass(frozen=True)
class AbsenteeismParams:
    """Absence model and feature-construction parameters."""

    p_base: float = 0.05
    p_sick: float = 0.95
    maxlag: int = 15
    window_days: int = 14
    year_length: float = 365.25

    def validate(self) -> None:
        if not 0.0 <= self.p_base <= self.p_sick <= 1.0:
            raise InvalidParameterError(
                f"need 0 <= p_base <= p_sick <= 1 (got p_base={self.p_base}, p_sick={self.p_sick})"
            )
        if self.maxlag < 0:
            raise InvalidParameterError(f"maxlag must be >= 0 (got {self.maxlag})")
        if self.window_days < 1:
            raise InvalidParameterError(f"window_days must be >= 1 (got {self.window_days})")
        if not self.year_length > 0:
            raise InvalidParameterError(f"year_length must be > 0 (got {self.year_length})")


@dataclass
class StudentInfections:
    """Per-student infection start days for one school year.

    A student with start day d is infected (absence-prone at ``p_sick``) on
    days d..d+inf_period-1.
    """

    student_rows: np.ndarray  # indices into the population's individual arrays
    start_days: np.ndarray
    inf_period: int
    horizon: int
    total_infections: int  # all allocated infections, students and others

    def daily_infected_students(self) -> np.ndarray:
        """Number of infected students on each day 1..horizon."""
        delta = np.zeros(self.horizon + 1, dtype=np.int64)
        for d in self.start_days:
            d = int(d)
            delta[d - 1] += 1
            end = min(d - 1 + self.inf_period, self.horizon)
            delta[end] -= 1
        return np.cumsum(delta[: self.horizon])


def allocate_student_infections(
    series: EpidemicSeries, population: PopulationFrame, stream: RngStream
) -> StudentInfections:
    """Assign each day's new infections uniformly over remaining susceptibles.

    Only student identities are tracked (they drive absences); the student
    share of each day's infections is hypergeometric by construction.
    """
    n_total = population.n_individuals
    student_rows = population.student_rows()
    pool = student_rows.copy()
    pool_size = pool.size
    susceptible = n_total
    gen = stream.generator
    hit_rows: list[np.ndarray] = []
    hit_days: list[int] = []
    total = 0
    for t in range(series.T):
        m = int(series.new_inf[t])
        if m == 0:
            continue
        if m > susceptible:
            raise SimulationError(
                f"day {t + 1}: {m} new infections exceed {susceptible} remaining susceptibles",
                stage="surveillance",
            )
        k = int(gen.hypergeometric(pool_size, susceptible - pool_size, m)) if pool_size else 0
        if k > 0:
            picks = gen.choice(pool_size, size=k, replace=False)
            hit_rows.append(pool[picks].copy())
            hit_days.append(t + 1)
            # swap-remove the chosen students from the pool
            picks = np.sort(picks)[::-1]
            for idx in picks:
                pool_size -= 1
                pool[idx] = pool[pool_size]
        susceptible -= m
        total += m
    if hit_rows:
        rows = np.concatenate(hit_rows)
        days = np.concatenate(
            [np.full(r.size, d, dtype=np.int64) for r, d in zip(hit_rows, hit_days)]
        )
    else:
        rows = np.empty(0, dtype=np.int64)
        days = np.empty(0, dtype=np.int64)
    return StudentInfections(
        student_rows=rows,
        start_days=days,
        inf_period=series.inf_period,
        horizon=series.T,
        total_infections=total,
    )


def simulate_absences(
    infections: StudentInfections,
    population: PopulationFrame,
    params: AbsenteeismParams,
    stream: RngStream,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Daily (absent, absent_sick, pct_absent) over the year.

    Infected students are absent with probability ``p_sick``, everyone else
    with ``p_base``; counts are drawn as the sum of the two group binomials.
    """
    params.validate()
    n_students = population.n_students
    if n_students == 0:
        raise SimulationError("population has no enrolled students", stage="surveillance")
    T = infections.horizon
    infected = infections.daily_infected_students()
    gen = stream.generator
    absent_sick = gen.binomial(infected, params.p_sick).astype(np.int64)
    absent_other = gen.binomial(n_students - infected, params.p_base).astype(np.int64)
    absent = absent_sick + absent_other
    pct = absent / n_students
    assert len(absent) == T
    return absent, absent_sick, pct


@dataclass
class SurveillanceDataset:
    """Concatenated per-year daily surveillance table."""

    columns: list[str]
    data: dict[str, np.ndarray]
    maxlag: int

    @property
    def n_rows(self) -> int:
        return len(self.data["Date"])

    def years(self) -> list[int]:
        return sorted(int(y) for y in np.unique(self.data["ScYr"]))

    def year_mask(self, year: int) -> np.ndarray:
        return self.data["ScYr"] == year

    def year_slice(self, year: int) -> "SurveillanceDataset":
        mask = self.year_mask(year)
        if not mask.any():
            raise ConfigurationError(f"no rows for school year {year}")
        return SurveillanceDataset(
            columns=list(self.columns),
            data={c: self.data[c][mask] for c in self.columns},
            maxlag=self.maxlag,
        )

    def reference_day(self, year: int) -> int | None:
        mask = self.year_mask(year) & (self.data["ref_date"] == 1)
        if not mask.any():
            return None
        return int(self.data["Date"][mask][0])

    def lag_columns(self) -> list[str]:
        return [f"lag{k}" for k in range(self.maxlag + 1)]

    def write_csv(self, path: str | Path) -> None:
        tableio.write_csv(path, self.columns, self.data)

    def write_json(self, path: str | Path) -> None:
        tableio.write_json(
            path,
            {"columns": self.columns, "data": {c: tableio.json_safe(self.data[c]) for c in self.columns}},
        )

    @classmethod
    def from_columns(cls, columns: list[str], data: dict[str, np.ndarray]) -> "SurveillanceDataset":
        maxlag = _validate_schema(columns)
        typed: dict[str, np.ndarray] = {}
        for c in columns:
            arr = np.asarray(data[c])
            if c in _INT_COLUMNS:
                fv = arr.astype(float)
                if np.any(np.isnan(fv)):
                    raise ConfigurationError(f"column {c!r} has missing values")
                typed[c] = fv.astype(np.int64)
            else:
                typed[c] = arr.astype(float)
        ds = cls(columns=list(columns), data=typed, maxlag=maxlag)
        _validate_values(ds)
        return ds

    @classmethod
    def read_csv(cls, path: str | Path) -> "SurveillanceDataset":
        header, rows = tableio.read_csv(path)
        data = {c: tableio.column_floats(header, rows, c) for c in header}
        return cls.from_columns(header, data)

    @classmethod
    def read_json(cls, path: str | Path) -> "SurveillanceDataset":
        import json

        with open(path) as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict) or "columns" not in obj or "data" not in obj:
            raise ConfigurationError(f"{path}: expected an object with 'columns' and 'data'")
        columns = list(obj["columns"])
        data = {}
        for c in columns:
            if c not in obj["data"]:
                raise ConfigurationError(f"{path}: missing data for column {c!r}")
            data[c] = np.array(
                [np.nan if v is None else float(v) for v in obj["data"][c]], dtype=float
            )
        return cls.from_columns(columns, data)


def _validate_schema(columns: list[str]) -> int:
    """Check exact column naming/order contract; return the inferred maxlag."""
    base = list(columns[: len(BASE_COLUMNS)])
    if base != list(BASE_COLUMNS):
        raise ConfigurationError(
            f"surveillance columns must start with {list(BASE_COLUMNS)} (got {base})"
        )
    lag_cols = columns[len(BASE_COLUMNS) :]
    if not lag_cols:
        raise ConfigurationError("surveillance table has no lag columns")
    for k, name in enumerate(lag_cols):
        if name != f"lag{k}":
            raise ConfigurationError(f"expected column lag{k}, got {name!r}")
    if len(columns) != len(BASE_COLUMNS) + len(lag_cols):
        raise ConfigurationError("duplicate columns in surveillance table")
    return len(lag_cols) - 1


def _validate_values(ds: SurveillanceDataset) -> None:
    pct = ds.data["pct_absent"]
    if np.any((pct < 0) | (pct > 1)):
        raise ConfigurationError("pct_absent outside [0, 1]")
    for c in ("Case", "window", "ref_date"):
        vals = ds.data[c]
        if not np.all((vals == 0) | (vals == 1)):
            raise ConfigurationError(f"column {c!r} must be binary")
    for year in ds.years():
        dates = ds.data["Date"][ds.year_mask(year)]
        if np.any(np.diff(dates) != 1) or dates[0] != 1:
            raise ConfigurationError(f"school year {year}: Date must run 1..T contiguously")


def compile_dataset(
    epidemics: list[EpidemicSeries],
    population: PopulationFrame,
    params: AbsenteeismParams,
    stream: RngStream,
    case_from: str = "reported",
) -> SurveillanceDataset:
    """Build the full multi-year table from epidemic replicates.

    Years without a reference date are kept (with all-zero window/ref_date
    flags) and a warning is emitted; evaluation skips them.
    """
    params.validate()
    if case_from not in CASE_SOURCES:
        raise ConfigurationError(
            f"case_from must be one of {CASE_SOURCES} (got {case_from!r})"
        )
    if not epidemics:
        raise ConfigurationError("no epidemic replicates to compile")
    columns = list(BASE_COLUMNS) + [f"lag{k}" for k in range(params.maxlag + 1)]
    blocks: list[dict[str, np.ndarray]] = []
    for series in epidemics:
        year = series.replicate_id
        year_stream = stream.child(f"year-{year}")
        infections = allocate_student_infections(series, population, year_stream.child("allocate"))
        absent, absent_sick, pct = simulate_absences(
            infections, population, params, year_stream.child("absence")
        )
        T = series.T
        dates = np.arange(1, T + 1, dtype=np.int64)
        phase = 2.0 * math.pi * dates / params.year_length
        ref = series.reference_date
        window = np.zeros(T, dtype=np.int64)
        ref_flag = np.zeros(T, dtype=np.int64)
        if ref is None:
            warnings.warn(
                f"school year {year} has no reference date; it will be excluded "
                f"from alert evaluation",
                stacklevel=2,
            )
        else:
            window[(dates >= ref - params.window_days) & (dates <= ref)] = 1
            ref_flag[dates == ref] = 1
        case_src = series.reported if case_from == "reported" else series.new_inf
        block = {
            "Date": dates,
            "ScYr": np.full(T, year, dtype=np.int64),
            "pct_absent": pct,
            "absent": absent,
            "absent_sick": absent_sick,
            "new_inf": series.new_inf.astype(np.int64),
            "reported_cases": series.reported.astype(np.int64),
            "Case": (case_src >= 1).astype(np.int64),
            "sinterm": np.sin(phase),
            "costerm": np.cos(phase),
            "window": window,
            "ref_date": ref_flag,
        }
        for k in range(params.maxlag + 1):
            lag = np.full(T, np.nan)
            if k < T:
                lag[k:] = pct[: T - k]  # shifts never cross the year boundary
            block[f"lag{k}"] = lag
        blocks.append(block)
    data = {c: np.concatenate([b[c] for b in blocks]) for c in columns}
    return SurveillanceDataset(columns=columns, data=data, maxlag=params.maxlag)
