"""Alert-quality metrics and the (lag x threshold) tuning grid.

Every alert is scored by how far ahead of the year's reference date it
lands (tau = ref - alert day). Alerts within tau_opt days are "true";
earlier ones are false. Per-year scores (FAR, ADD, AATQ, FATQ) are
averaged or weighted across evaluable years for each candidate (lag,
threshold) pair, and the grid minimum picks the tuning per metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .detection import LagLogisticSpec, fit, predict_daily_risk, raise_alerts
from .errors import ConfigurationError, EvaluationError, InvalidParameterError
from .surveillance import SurveillanceDataset

METRIC_NAMES = ("FAR", "ADD", "AATQ", "FATQ", "WAATQ", "WFATQ")


@dataclass
class MetricParams:
    """Tuning knobs for alert-timing scores.

    tau_opt is the ideal number of days between an alert and the
    reference date; tau_max (defaults to tau_opt) is the ADD penalty
    when a year raises no true alert; k widens the acceptable-alert
    window and a sharpens the timing penalty.
    """

    tau_opt: float = 14.0
    tau_max: float | None = None
    k: float = 1.0
    a: float = 1.0

    @property
    def no_alert_penalty(self) -> float:
        return self.tau_opt if self.tau_max is None else self.tau_max

    def validate(self) -> None:
        if not self.tau_opt >= 1:
            raise InvalidParameterError(f"tau_opt must be >= 1 (got {self.tau_opt})")
        if not self.no_alert_penalty >= 0:
            raise InvalidParameterError(f"tau_max must be >= 0 (got {self.tau_max})")
        if not self.k > 0:
            raise InvalidParameterError(f"k must be > 0 (got {self.k})")
        if not self.a > 0:
            raise InvalidParameterError(f"a must be > 0 (got {self.a})")


@dataclass
class YearEvaluation:
    """One year's alert scores under a fixed (lag, threshold) model."""

    year: int
    ref: int
    alert_taus: tuple[float, ...]  # ordered by alert day (descending tau)
    true_alert_taus: tuple[float, ...]
    false_count: int
    far: float
    add: float
    aatq: float
    fatq: float


def far(alert_taus: Iterable[float], tau_opt: float) -> float:
    """False alert rate n_f / (n_f + 1); 1 when no true alert was raised."""
    taus = [float(t) for t in alert_taus]
    n_true = sum(1 for t in taus if 0.0 <= t <= tau_opt)
    n_false = sum(1 for t in taus if t > tau_opt)
    if n_true == 0:
        return 1.0
    return n_false / (n_false + 1.0)


def add(
    alert_taus: Iterable[float],
    tau_opt: float,
    tau_max: float,
    use_first_true_alert: bool = True,
) -> float:
    """Alert delay tau_opt - tau of the first qualifying alert.

    Input must be ordered by alert day. The default scores the first
    *true* alert so the delay stays in [0, tau_opt]; flipping the switch
    scores the first alert overall (which can go negative when a false
    alert precedes the acceptable window).
    """
    for t in alert_taus:
        t = float(t)
        if use_first_true_alert and not 0.0 <= t <= tau_opt:
            continue
        return tau_opt - t
    return float(tau_max)


def atq(tau: float, params: MetricParams | None = None) -> float:
    """Timing quality of one alert: 0 at tau_opt, growing toward 1.

    Late alerts (tau below tau_opt) are scored d^(2a) and early ones
    d^a with d = |tau_opt - tau| / (k * tau_opt), so an early alert
    costs more than an equally distant late one; anything earlier than
    (k + 1) * tau_opt is as bad as no alert.
    """
    params = MetricParams() if params is None else params
    params.validate()
    tau = float(tau)
    if tau < 0:
        raise InvalidParameterError(f"tau must be >= 0 (got {tau})")
    d = abs(params.tau_opt - tau) / (params.k * params.tau_opt)
    if tau <= params.tau_opt:
        value = d ** (2.0 * params.a)
    elif tau <= (params.k + 1.0) * params.tau_opt:
        value = d**params.a
    else:
        value = 1.0
    return float(min(1.0, max(0.0, value)))


def aatq(alert_atqs: Sequence[float]) -> float:
    """Mean timing quality over all alerts; 1 when none were raised."""
    values = [float(v) for v in alert_atqs]
    if not values:
        return 1.0
    return float(np.mean(values))


def fatq(alert_atqs: Sequence[float]) -> float:
    """Timing quality of the first alert raised; 1 when none were."""
    values = [float(v) for v in alert_atqs]
    if not values:
        return 1.0
    return values[0]


def year_weights(training_counts: Iterable[int]) -> np.ndarray:
    """Weights proportional to each evaluable year's training history."""
    counts = np.asarray(list(training_counts), dtype=float)
    if counts.size == 0:
        raise InvalidParameterError("need at least one evaluable year")
    if np.any(counts <= 0):
        raise InvalidParameterError("training-year counts must be positive")
    return counts / counts.sum()


def weighted_aggregate(values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted sum of per-year values under weights that sum to 1."""
    v = np.asarray([float(x) for x in values])
    w = np.asarray([float(x) for x in weights])
    if v.shape != w.shape:
        raise InvalidParameterError(
            f"got {v.size} values but {w.size} weights"
        )
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise InvalidParameterError(f"weights must sum to 1 (got {w.sum()})")
    return float(v @ w)


def evaluate_year(
    year: int,
    ref: int,
    alert_days: Sequence[int],
    params: MetricParams | None = None,
    add_uses_first_true_alert: bool = True,
) -> YearEvaluation:
    """Score one year's alert days against its reference date."""
    params = MetricParams() if params is None else params
    params.validate()
    days = sorted(int(d) for d in alert_days)
    if days and days[-1] > ref:
        raise InvalidParameterError(
            f"alert day {days[-1]} falls after the reference day {ref}"
        )
    taus = tuple(float(ref - d) for d in days)
    true_taus = tuple(t for t in taus if t <= params.tau_opt)
    n_false = sum(1 for t in taus if t > params.tau_opt)
    atqs = [atq(t, params) for t in taus]
    return YearEvaluation(
        year=int(year),
        ref=int(ref),
        alert_taus=taus,
        true_alert_taus=true_taus,
        false_count=n_false,
        far=far(taus, params.tau_opt),
        add=add(taus, params.tau_opt, params.no_alert_penalty, add_uses_first_true_alert),
        aatq=aatq(atqs),
        fatq=fatq(atqs),
    )


@dataclass
class MetricGrid:
    """Full (lag x threshold) evaluation: matrices, winners, failures."""

    lags: tuple[int, ...]
    thresholds: tuple[float, ...]
    matrices: dict[str, np.ndarray]  # metric -> (n_lags, n_thresholds)
    best: dict[str, tuple[int, float, float]]  # metric -> (lag, threshold, value)
    first_alerts: dict[str, dict[int, int | None]]  # under each metric's best model
    refs: dict[int, int | None]
    years: tuple[int, ...]
    evaluable_years: tuple[int, ...]
    weights: dict[int, float]
    failed_cells: frozenset[tuple[int, float]]

    def summary(self) -> dict:
        """Per-metric mean/variance over scored cells plus the winner."""
        out = {}
        for name in METRIC_NAMES:
            m = self.matrices[name]
            values = m[np.isfinite(m)]
            lag, threshold, minimum = self.best[name]
            out[name] = {
                "mean": float(np.mean(values)),
                "variance": float(np.var(values, ddof=1)) if values.size > 1 else 0.0,
                "optimal_lag": int(lag),
                "optimal_threshold": float(threshold),
                "minimum": float(minimum),
            }
        return out

    def per_year_rows(self) -> list[dict]:
        """One row per year: reference day and first alert day per metric.

        Years that could not be evaluated (no training history or no
        reference date) carry None in the alert columns.
        """
        rows = []
        for year in self.years:
            row: dict = {"year": int(year), "ref_date": self.refs.get(year)}
            for name in METRIC_NAMES:
                row[name] = self.first_alerts[name].get(year)
            rows.append(row)
        return rows


def evaluate_grid(
    dataset: SurveillanceDataset,
    thresholds: Sequence[float],
    maxlag: int | None = None,
    params: MetricParams | None = None,
    predictor: Callable[[int, int], np.ndarray] | None = None,
    parallel_map: Callable | None = None,
    add_uses_first_true_alert: bool = True,
    year_start: int = 1,
) -> MetricGrid:
    """Score every lag in 1..maxlag against every threshold.

    Each evaluable target year (second year onward, reference date
    observed) is predicted by a model trained on all prior years; the
    fit is shared across thresholds. A fit failure poisons every
    threshold at that lag. ``predictor(lag, year)`` swaps in externally
    supplied per-day risks, bypassing model fitting entirely.
    ``parallel_map`` may be an order-preserving map (e.g. a thread
    pool's) used for the fitting stage.
    """
    params = MetricParams() if params is None else params
    params.validate()
    maxlag = dataset.maxlag if maxlag is None else int(maxlag)
    if not 1 <= maxlag <= dataset.maxlag:
        raise ConfigurationError(
            f"maxlag must lie in 1..{dataset.maxlag} (got {maxlag})", stage="evaluate"
        )
    thres = tuple(float(t) for t in thresholds)
    if not thres:
        raise ConfigurationError("need at least one threshold", stage="evaluate")
    for t in thres:
        if not 0.0 < t < 1.0:
            raise ConfigurationError(
                f"thresholds must lie strictly inside (0, 1) (got {t})",
                stage="evaluate",
            )
    years = tuple(dataset.years())
    refs = {y: dataset.reference_day(y) for y in years}
    evaluable = tuple(
        y for i, y in enumerate(years) if i >= 1 and refs[y] is not None
    )
    if len(evaluable) < 2:
        raise ConfigurationError(
            "grid evaluation needs at least 2 target years with reference dates "
            f"(got {len(evaluable)})",
            stage="evaluate",
        )
    position = {y: i for i, y in enumerate(years)}
    w = year_weights([position[y] for y in evaluable])
    weights = {y: float(wj) for y, wj in zip(evaluable, w)}
    lags = tuple(range(1, maxlag + 1))
    year_slices = {y: dataset.year_slice(y) for y in evaluable}
    year_dates = {y: year_slices[y].data["Date"] for y in evaluable}

    def predictions_for(task: tuple[int, int]):
        lag, year = task
        if predictor is not None:
            return lag, year, np.asarray(predictor(lag, year), dtype=float)
        try:
            model = fit(dataset, years[: position[year]], lag)
        except EvaluationError:
            return lag, year, None
        if not model.converged:
            return lag, year, None
        return lag, year, predict_daily_risk(model, year_slices[year], lag)

    tasks = [(lag, year) for lag in lags for year in evaluable]
    mapper = map if parallel_map is None else parallel_map
    theta_by: dict[tuple[int, int], np.ndarray] = {}
    lag_ok = dict.fromkeys(lags, True)
    for lag, year, theta in mapper(predictions_for, tasks):
        if theta is None:
            lag_ok[lag] = False
        else:
            theta_by[(lag, year)] = theta

    shape = (len(lags), len(thres))
    matrices = {name: np.full(shape, np.nan) for name in METRIC_NAMES}
    failed: set[tuple[int, float]] = set()
    first_by_cell: dict[tuple[int, float], dict[int, int | None]] = {}
    for li, lag in enumerate(lags):
        if not lag_ok[lag]:
            failed.update((lag, t) for t in thres)
            continue
        for ti, t in enumerate(thres):
            spec = LagLogisticSpec(lag_size=lag, threshold=t)
            evals = []
            firsts: dict[int, int | None] = {}
            for year in evaluable:
                trace = raise_alerts(
                    theta_by[(lag, year)],
                    spec,
                    year_start,
                    refs[year],
                    dates=year_dates[year],
                    year=year,
                )
                days = [int(d) for d in trace.alert_days]
                firsts[year] = days[0] if days else None
                evals.append(
                    evaluate_year(year, refs[year], days, params, add_uses_first_true_alert)
                )
            matrices["FAR"][li, ti] = float(np.mean([e.far for e in evals]))
            matrices["ADD"][li, ti] = float(np.mean([e.add for e in evals]))
            matrices["AATQ"][li, ti] = float(np.mean([e.aatq for e in evals]))
            matrices["FATQ"][li, ti] = float(np.mean([e.fatq for e in evals]))
            matrices["WAATQ"][li, ti] = weighted_aggregate([e.aatq for e in evals], w)
            matrices["WFATQ"][li, ti] = weighted_aggregate([e.fatq for e in evals], w)
            first_by_cell[(lag, t)] = firsts

    best: dict[str, tuple[int, float, float]] = {}
    for name in METRIC_NAMES:
        m = matrices[name]
        winner: tuple[int, float, float] | None = None
        for li, lag in enumerate(lags):
            for ti, t in enumerate(thres):
                value = m[li, ti]
                if (lag, t) in failed or not np.isfinite(value):
                    continue
                if winner is None or value < winner[2]:  # ties keep the earlier cell
                    winner = (lag, t, float(value))
        if winner is None:
            raise EvaluationError(
                "every (lag, threshold) cell failed to fit", stage="evaluate"
            )
        best[name] = winner
    first_alerts = {
        name: dict(first_by_cell[(best[name][0], best[name][1])])
        for name in METRIC_NAMES
    }
    return MetricGrid(
        lags=lags,
        thresholds=thres,
        matrices=matrices,
        best=best,
        first_alerts=first_alerts,
        refs=refs,
        years=years,
        evaluable_years=evaluable,
        weights=weights,
        failed_cells=frozenset(failed),
    )
