"""Stochastic chain-binomial SIR epidemics with imperfect case reporting.

Daily transmission: each susceptible escapes infection on day t with
probability exp(-alpha * I_t / N - spark_t), so new infections are
Binomial(S_t, 1 - exp(-alpha * I_t / N - spark_t)). Infected individuals
stay infectious exactly ``inf_period`` days, then recover. The initial
``inf_init`` infections are seeded on a drawn start day.

New infections are drawn through the binomial inverse CDF applied to one
pre-drawn uniform per day, so two runs sharing a stream are coupled through
common random numbers: raising alpha never lowers any day's cumulative
infections.

Reporting: each day's new infections are thinned Binomial(n, report_prop);
each reported case receives an exponential delay (mean
``report_delay_mean`` days) rounded to the nearest whole day; cases landing
past the horizon are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binom as _binom

from .errors import ConfigurationError, InvalidParameterError, SimulationError
from .stochastics import RngStream
from . import tableio


@dataclass(frozen=True)
class SsirParams:
    """Chain-binomial SIR parameters. Days are 1-based up to horizon T."""

    N: int
    T: int = 300
    alpha: float = 0.298
    spark: float = 0.0
    avg_start: int = 45
    min_start: int = 20
    inf_period: int = 4
    inf_init: int = 32
    report_prop: float = 0.02
    report_delay_mean: float = 7.0
    rep: int = 10
    start_sd: float | None = None  # default (avg_start - min_start) / 3

    def validate(self) -> None:
        if self.N < 1:
            raise InvalidParameterError(f"N must be >= 1 (got {self.N})")
        if self.T < 1:
            raise InvalidParameterError(f"T must be >= 1 (got {self.T})")
        if self.alpha < 0:
            raise InvalidParameterError(f"alpha must be >= 0 (got {self.alpha})")
        if self.spark < 0:
            raise InvalidParameterError(f"spark must be >= 0 (got {self.spark})")
        if self.inf_period < 1:
            raise InvalidParameterError(f"inf_period must be >= 1 (got {self.inf_period})")
        if not 0 <= self.inf_init <= self.N:
            raise InvalidParameterError(
                f"inf_init must be in [0, N] (got {self.inf_init}, N={self.N})"
            )
        if not 1 <= self.min_start <= self.avg_start:
            raise InvalidParameterError(
                f"need 1 <= min_start <= avg_start (got min_start={self.min_start}, "
                f"avg_start={self.avg_start})"
            )
        if self.avg_start >= self.T:
            raise InvalidParameterError(
                f"avg_start must be < T (got avg_start={self.avg_start}, T={self.T})"
            )
        if not 0.0 <= self.report_prop <= 1.0:
            raise InvalidParameterError(
                f"report_prop must be in [0, 1] (got {self.report_prop})"
            )
        if self.report_delay_mean < 0:
            raise InvalidParameterError(
                f"report_delay_mean must be >= 0 (got {self.report_delay_mean})"
            )
        if self.rep < 1:
            raise InvalidParameterError(f"rep must be >= 1 (got {self.rep})")
        if self.start_sd is not None and self.start_sd < 0:
            raise InvalidParameterError(f"start_sd must be >= 0 (got {self.start_sd})")


@dataclass
class EpidemicSeries:
    """One replicate's daily trajectories; index 0 holds day 1."""

    replicate_id: int
    start_day: int
    inf_period: int
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    new_inf: np.ndarray
    reported: np.ndarray
    reference_date: int | None = field(default=None)

    @property
    def T(self) -> int:
        return len(self.new_inf)

    def total_infected(self) -> int:
        return int(self.new_inf.sum())

    def total_reported(self) -> int:
        return int(self.reported.sum())

    def peak_infected(self) -> int:
        return int(self.I.max())


def infection_probability(alpha: float, infectious: int, n: int, spark: float = 0.0) -> float:
    """Per-susceptible daily infection probability 1 - exp(-alpha*I/N - spark)."""
    if n < 1:
        raise InvalidParameterError(f"population size must be >= 1 (got {n})")
    return -np.expm1(-alpha * infectious / n - spark)


def draw_start_day(params: SsirParams, stream: RngStream) -> int:
    """Start day: rounded Normal(avg_start, sd) floored at min_start.

    The default sd puts min_start three standard deviations below the mean.
    """
    sd = params.start_sd
    if sd is None:
        sd = (params.avg_start - params.min_start) / 3.0
    draw = stream.generator.normal(params.avg_start, sd) if sd > 0 else float(params.avg_start)
    return max(params.min_start, int(np.rint(draw)))


def simulate_one(params: SsirParams, rep_stream: RngStream, replicate_id: int = 1) -> EpidemicSeries:
    """Simulate one replicate using `start`/`infection`/`reporting` substreams."""
    T = params.T
    N = params.N
    start = draw_start_day(params, rep_stream.child("start"))
    new_inf = np.zeros(T, dtype=np.int64)
    S = np.zeros(T, dtype=np.int64)
    I = np.zeros(T, dtype=np.int64)
    R = np.zeros(T, dtype=np.int64)

    # one uniform per day, drawn up front: common random numbers across
    # parameter variants sharing this stream
    u = rep_stream.child("infection").generator.random(T)

    susceptible = N
    for t in range(T):
        day = t + 1
        if day == start:
            seed = min(params.inf_init, susceptible)
            new_inf[t] = seed
            susceptible -= seed
        elif day > start:
            # force of infection from the previous day's active cohorts
            infectious = int(new_inf[max(0, t - params.inf_period) : t].sum())
            if susceptible > 0 and (infectious > 0 or params.spark > 0):
                p = infection_probability(params.alpha, infectious, N, params.spark)
                draws = int(_binom.ppf(u[t], susceptible, p)) if p > 0 else 0
                new_inf[t] = draws
                susceptible -= draws
        active = int(new_inf[max(0, t - params.inf_period + 1) : t + 1].sum())
        S[t] = susceptible
        I[t] = active
        R[t] = N - susceptible - active
    if susceptible < 0:
        raise SimulationError("susceptible count went negative", stage="epidemic")

    reported = apply_reporting(
        new_inf, params.report_prop, params.report_delay_mean, rep_stream.child("reporting")
    )
    series = EpidemicSeries(
        replicate_id=replicate_id,
        start_day=start,
        inf_period=params.inf_period,
        S=S,
        I=I,
        R=R,
        new_inf=new_inf,
        reported=reported,
    )
    series.reference_date = compute_reference_date(reported)
    return series


def simulate_ssir(params: SsirParams, stream: RngStream) -> list[EpidemicSeries]:
    """Simulate ``params.rep`` independent replicates under label-split streams."""
    params.validate()
    return [
        simulate_one(params, stream.child(f"rep-{r}"), replicate_id=r)
        for r in range(1, params.rep + 1)
    ]


def apply_reporting(
    new_inf: np.ndarray, report_prop: float, delay_mean: float, stream: RngStream
) -> np.ndarray:
    """Thin daily infections to reported counts with rounded exponential delays."""
    T = len(new_inf)
    reported = np.zeros(T, dtype=np.int64)
    if report_prop == 0.0:
        return reported
    gen = stream.generator
    for t in range(T):
        n = int(new_inf[t])
        if n == 0:
            continue
        confirmed = int(gen.binomial(n, report_prop))
        if confirmed == 0:
            continue
        if delay_mean > 0:
            delays = np.rint(gen.exponential(delay_mean, size=confirmed)).astype(np.int64)
        else:
            delays = np.zeros(confirmed, dtype=np.int64)
        days = t + 1 + delays
        days = days[days <= T]  # drop cases surfacing past the horizon
        if days.size:
            np.add.at(reported, days - 1, 1)
    return reported


def compute_reference_date(reported: np.ndarray, window_days: int = 7) -> int | None:
    """Day of the second case of the first pair of consecutive confirmed cases
    whose dates differ by at most ``window_days``; None when no pair qualifies.
    Two cases confirmed the same day form a pair with gap zero.
    """
    prev_day: int | None = None
    for t in np.flatnonzero(reported > 0):
        day = int(t) + 1
        if prev_day is not None and day - prev_day <= window_days:
            return day
        if reported[t] >= 2:
            return day
        prev_day = day
    return None


EPIDEMIC_COLUMNS = ("rep", "day", "S", "I", "R", "new_inf", "reported")


def write_epidemic_csv(series_list: list[EpidemicSeries], path: str | Path) -> None:
    """Write all replicates' daily trajectories as one long table."""
    reps = []
    days = []
    for s in series_list:
        reps.append(np.full(s.T, s.replicate_id, dtype=np.int64))
        days.append(np.arange(1, s.T + 1, dtype=np.int64))
    data = {
        "rep": np.concatenate(reps),
        "day": np.concatenate(days),
        "S": np.concatenate([s.S for s in series_list]),
        "I": np.concatenate([s.I for s in series_list]),
        "R": np.concatenate([s.R for s in series_list]),
        "new_inf": np.concatenate([s.new_inf for s in series_list]),
        "reported": np.concatenate([s.reported for s in series_list]),
    }
    tableio.write_csv(path, EPIDEMIC_COLUMNS, data)


def read_epidemic_csv(path: str | Path, inf_period: int) -> list[EpidemicSeries]:
    """Rebuild replicates from the long table written by write_epidemic_csv.

    The start day is recovered as the first day with new infections (0
    when a replicate never took off) and the reference date is recomputed
    from the reported series.
    """
    header, rows = tableio.read_csv(path)
    if list(header) != list(EPIDEMIC_COLUMNS):
        raise ConfigurationError(
            f"{path}: expected columns {list(EPIDEMIC_COLUMNS)}, got {header}"
        )
    cols = {name: tableio.column_ints(header, rows, name) for name in EPIDEMIC_COLUMNS}
    series_list = []
    for rep in np.unique(cols["rep"]):
        idx = np.flatnonzero(cols["rep"] == rep)
        days = cols["day"][idx]
        order = np.argsort(days)
        idx = idx[order]
        if not np.array_equal(cols["day"][idx], np.arange(1, len(idx) + 1)):
            raise ConfigurationError(f"{path}: replicate {rep} days are not 1..T")
        new_inf = cols["new_inf"][idx]
        reported = cols["reported"][idx]
        nonzero = np.flatnonzero(new_inf > 0)
        series = EpidemicSeries(
            replicate_id=int(rep),
            start_day=int(nonzero[0]) + 1 if nonzero.size else 0,
            inf_period=int(inf_period),
            S=cols["S"][idx],
            I=cols["I"][idx],
            R=cols["R"][idx],
            new_inf=new_inf,
            reported=reported,
        )
        series.reference_date = compute_reference_date(reported)
        series_list.append(series)
    return series_list


def epidemic_summary(series_list: list[EpidemicSeries]) -> dict:
    """Cross-replicate averages of totals and peaks."""
    n = len(series_list)
    return {
        "n_sims": n,
        "avg_total_infected": float(np.mean([s.total_infected() for s in series_list])),
        "avg_total_reported": float(np.mean([s.total_reported() for s in series_list])),
        "avg_peak_infected": float(np.mean([s.peak_infected() for s in series_list])),
    }
