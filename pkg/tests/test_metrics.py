"""Alert-quality metric scores and the tuning-grid search."""

import numpy as np
import pytest

from episentinel.errors import ConfigurationError, EvaluationError, InvalidParameterError
from episentinel.metrics import (
    METRIC_NAMES,
    MetricParams,
    add,
    aatq,
    atq,
    evaluate_grid,
    evaluate_year,
    far,
    fatq,
    weighted_aggregate,
    year_weights,
)

from helpers import build_surveillance


def test_far_cases():
    assert far([], 14) == 1.0
    assert far([3.0], 14) == 0.0
    # three false alerts alongside one true one
    assert far([20.0, 18.0, 16.0, 3.0], 14) == 0.75
    # false alerts alone never count as detection
    assert far([20.0, 30.0], 14) == 1.0


def test_add_cases():
    assert add([14.0], 14, 14) == 0.0
    assert add([], 14, 14) == 14.0
    assert add([5.0], 14, 14) == 9.0
    # false alert first: default skips it, the switch scores it
    assert add([20.0, 5.0], 14, 14) == 9.0
    assert add([20.0, 5.0], 14, 14, use_first_true_alert=False) == -6.0


def test_atq_piecewise():
    p = MetricParams(tau_opt=14, k=1, a=1)
    assert atq(14, p) == 0.0
    assert atq(29, p) == 1.0
    assert atq(21, p) == pytest.approx(0.5)
    assert atq(7, p) == pytest.approx(0.25)
    # same 7-day deviation: the early alert costs twice the late one
    assert atq(21, p) == 2 * atq(7, p)
    with pytest.raises(InvalidParameterError):
        atq(-1.0, p)


def test_atq_minimized_exactly_at_tau_opt():
    p = MetricParams(tau_opt=14, k=1.5, a=0.8)
    taus = np.linspace(0.0, (p.k + 1) * p.tau_opt, 701)
    values = np.array([atq(t, p) for t in taus])
    assert np.all((values >= 0.0) & (values <= 1.0))
    assert atq(p.tau_opt, p) == 0.0
    assert np.all(values[np.abs(taus - p.tau_opt) > 1e-9] > 0.0)


def test_aatq_and_fatq():
    assert aatq([]) == 1.0
    assert aatq([0.4]) == 0.4
    assert aatq([0.2, 0.4]) == pytest.approx(0.3)
    assert fatq([]) == 1.0
    assert fatq([0.7, 0.1, 0.0]) == 0.7
    assert fatq([0.4]) == aatq([0.4])


def test_year_weights():
    np.testing.assert_allclose(year_weights([1, 2, 3]), [1 / 6, 2 / 6, 3 / 6])
    np.testing.assert_allclose(year_weights([5]), [1.0])
    np.testing.assert_allclose(year_weights([2, 2, 2, 2]), [0.25] * 4)
    with pytest.raises(InvalidParameterError):
        year_weights([])
    with pytest.raises(InvalidParameterError):
        year_weights([1, 0])


def test_weighted_aggregate():
    assert weighted_aggregate([0.2, 0.4], [0.5, 0.5]) == pytest.approx(0.3)
    assert weighted_aggregate([1.0, 1.0, 1.0], [0.2, 0.3, 0.5]) == pytest.approx(1.0)
    assert weighted_aggregate([0.9, 0.1], [1.0, 0.0]) == pytest.approx(0.9)
    # uniform weights reduce the weighted sum to the plain mean
    values = [0.1, 0.5, 0.3]
    assert weighted_aggregate(values, [1 / 3] * 3) == pytest.approx(np.mean(values))
    with pytest.raises(InvalidParameterError):
        weighted_aggregate([0.1], [0.5, 0.5])
    with pytest.raises(InvalidParameterError):
        weighted_aggregate([0.1, 0.2], [0.5, 0.4])


def test_metric_params_validation():
    MetricParams().validate()
    assert MetricParams(tau_opt=20).no_alert_penalty == 20
    assert MetricParams(tau_opt=20, tau_max=3).no_alert_penalty == 3
    for bad in (
        MetricParams(tau_opt=0),
        MetricParams(tau_max=-1),
        MetricParams(k=0),
        MetricParams(a=0),
    ):
        with pytest.raises(InvalidParameterError):
            bad.validate()


def test_evaluate_year_hand_case():
    p = MetricParams(tau_opt=14)
    ev = evaluate_year(4, 50, [20, 36, 41], p)
    assert ev.alert_taus == (30.0, 14.0, 9.0)
    assert ev.true_alert_taus == (14.0, 9.0)
    assert ev.false_count == 1
    assert ev.far == 0.5
    assert ev.add == 0.0  # first true alert lands exactly tau_opt early
    expected_atqs = [1.0, 0.0, (5 / 14) ** 2]
    assert ev.aatq == pytest.approx(np.mean(expected_atqs))
    assert ev.fatq == pytest.approx(1.0)
    with pytest.raises(InvalidParameterError):
        evaluate_year(4, 50, [55], p)


def _toy_dataset(n_years=3, T=30, maxlag=2, refs=None):
    pct = {j: np.full(T, 0.05) for j in range(1, n_years + 1)}
    case = {j: np.zeros(T, dtype=np.int64) for j in range(1, n_years + 1)}
    refs = refs if refs is not None else {1: 15, 2: 20, 3: 25}
    return build_surveillance(pct, case, maxlag=maxlag, refs=refs)


def test_grid_matches_hand_computed_oracle():
    ds = _toy_dataset()
    params = MetricParams(tau_opt=5, k=1, a=1)

    def predictor(lag, year):
        theta = np.full(30, 0.1)
        if year == 2:
            theta[[9, 17]] = 0.9  # days 10 and 18
        else:
            theta[:] = 0.2
        theta[:lag] = np.nan
        return theta

    grid = evaluate_grid(ds, thresholds=[0.5], maxlag=2, params=params, predictor=predictor)
    assert grid.lags == (1, 2)
    assert grid.evaluable_years == (2, 3)
    assert grid.weights == {2: pytest.approx(1 / 3), 3: pytest.approx(2 / 3)}
    # year 2: alerts on days 10 and 18 against ref 20 -> taus (10, 2);
    # tau 10 is false (ATQ 1), tau 2 is true (ATQ 0.36); year 3: no alerts
    year2 = {"far": 0.5, "add": 3.0, "aatq": 0.68, "fatq": 1.0}
    year3 = {"far": 1.0, "add": 5.0, "aatq": 1.0, "fatq": 1.0}
    expected = {
        "FAR": (year2["far"] + year3["far"]) / 2,
        "ADD": (year2["add"] + year3["add"]) / 2,
        "AATQ": (year2["aatq"] + year3["aatq"]) / 2,
        "FATQ": 1.0,
        "WAATQ": year2["aatq"] / 3 + year3["aatq"] * 2 / 3,
        "WFATQ": 1.0,
    }
    for name in METRIC_NAMES:
        np.testing.assert_allclose(grid.matrices[name], expected[name], err_msg=name)
        lag, threshold, value = grid.best[name]
        assert (lag, threshold) == (1, 0.5)  # tie across lags -> smaller lag
        assert value == pytest.approx(expected[name])
        assert grid.first_alerts[name] == {2: 10, 3: None}
    assert grid.failed_cells == frozenset()
    rows = grid.per_year_rows()
    assert rows[0] == {"year": 1, "ref_date": 15, **{n: None for n in METRIC_NAMES}}
    assert rows[1]["FAR"] == 10 and rows[1]["ref_date"] == 20
    assert rows[2]["WFATQ"] is None


def test_grid_constant_risk_alerts_from_first_predictable_day():
    ds = _toy_dataset()

    def predictor(lag, year):
        theta = np.full(30, 0.6)
        theta[:lag] = np.nan
        return theta

    grid = evaluate_grid(ds, thresholds=[0.5], maxlag=2, predictor=predictor)
    # every finite day through the ref alerts; the first is day lag+1
    for name in METRIC_NAMES:
        lag = grid.best[name][0]
        assert grid.first_alerts[name] == {2: lag + 1, 3: lag + 1}
    # year 2, ref 20, tau_opt 14: days 1..5 are false alerts
    for li, lag in enumerate(grid.lags):
        false_cnt = 5 - lag
        year2_far = false_cnt / (false_cnt + 1)
        year3_false = 10 - lag  # ref 25: days before 11 are early
        year3_far = year3_false / (year3_false + 1)
        assert grid.matrices["FAR"][li, 0] == pytest.approx((year2_far + year3_far) / 2)


def test_grid_tie_breaking_prefers_smaller_lag_then_threshold():
    ds = _toy_dataset()
    grid = evaluate_grid(
        ds,
        thresholds=[0.2, 0.5],
        maxlag=2,
        predictor=lambda lag, year: np.full(30, 0.6),
    )
    for name in METRIC_NAMES:
        assert grid.best[name][:2] == (1, 0.2)


def test_grid_requires_two_evaluable_target_years():
    with pytest.raises(ConfigurationError) as err:
        evaluate_grid(
            _toy_dataset(refs={1: 15, 2: 20}),
            thresholds=[0.5],
            maxlag=1,
            predictor=lambda lag, year: np.full(30, 0.6),
        )
    assert err.value.stage == "evaluate"
    with pytest.raises(ConfigurationError):
        evaluate_grid(
            _toy_dataset(refs={}),
            thresholds=[0.5],
            maxlag=1,
            predictor=lambda lag, year: np.full(30, 0.6),
        )


def test_grid_rejects_bad_thresholds_and_maxlag():
    ds = _toy_dataset()
    kwargs = dict(predictor=lambda lag, year: np.full(30, 0.6))
    with pytest.raises(ConfigurationError):
        evaluate_grid(ds, thresholds=[], maxlag=1, **kwargs)
    with pytest.raises(ConfigurationError):
        evaluate_grid(ds, thresholds=[0.0], maxlag=1, **kwargs)
    with pytest.raises(ConfigurationError):
        evaluate_grid(ds, thresholds=[0.5], maxlag=99, **kwargs)


def test_grid_failed_fit_poisons_the_whole_lag_row(monkeypatch):
    import episentinel.metrics as metrics_mod

    ds = _toy_dataset()
    real_fit = metrics_mod.fit

    def flaky_fit(dataset, years, lag_size, **kwargs):
        if lag_size == 2:
            raise EvaluationError("forced failure", stage="detection")
        return real_fit(dataset, years, lag_size, **kwargs)

    monkeypatch.setattr(metrics_mod, "fit", flaky_fit)
    grid = evaluate_grid(ds, thresholds=[0.3, 0.5], maxlag=2)
    assert grid.failed_cells == {(2, 0.3), (2, 0.5)}
    assert np.all(np.isnan(grid.matrices["FAR"][1]))
    assert np.all(np.isfinite(grid.matrices["FAR"][0]))
    for name in METRIC_NAMES:
        assert grid.best[name][0] == 1
    summary = grid.summary()
    for name in METRIC_NAMES:
        assert np.isfinite(summary[name]["mean"])
        assert np.isfinite(summary[name]["variance"])


def test_grid_with_real_fits_is_deterministic():
    rng = np.random.default_rng(7)
    n_years, T = 4, 120
    pct = {j: rng.uniform(0.02, 0.12, T) for j in range(1, n_years + 1)}
    case = {}
    for j in range(1, n_years + 1):
        eta = -3.0 + 25.0 * pct[j]
        case[j] = (rng.random(T) < 1 / (1 + np.exp(-eta))).astype(np.int64)
    refs = {j: 60 + 5 * j for j in range(1, n_years + 1)}
    ds = build_surveillance(pct, case, maxlag=2, refs=refs)
    first = evaluate_grid(ds, thresholds=[0.3, 0.5], maxlag=2)
    second = evaluate_grid(ds, thresholds=[0.3, 0.5], maxlag=2)
    for name in METRIC_NAMES:
        np.testing.assert_array_equal(first.matrices[name], second.matrices[name])
        assert first.best[name] == second.best[name]
    summary = first.summary()
    assert set(summary) == set(METRIC_NAMES)
    for name in ("FAR", "AATQ", "FATQ", "WAATQ", "WFATQ"):
        values = first.matrices[name]
        finite = values[np.isfinite(values)]
        assert np.all((finite >= 0.0) & (finite <= 1.0))


def test_grid_parallel_map_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    ds = _toy_dataset()

    def predictor(lag, year):
        theta = np.full(30, 0.1)
        theta[10 + lag] = 0.9
        return theta

    serial = evaluate_grid(ds, thresholds=[0.5], maxlag=2, predictor=predictor)
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = evaluate_grid(
            ds, thresholds=[0.5], maxlag=2, predictor=predictor, parallel_map=pool.map
        )
    for name in METRIC_NAMES:
        np.testing.assert_array_equal(serial.matrices[name], threaded.matrices[name])
        assert serial.best[name] == threaded.best[name]
        assert serial.first_alerts[name] == threaded.first_alerts[name]
