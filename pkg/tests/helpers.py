"""Shared builders for hand-constructed surveillance datasets."""

import numpy as np

from episentinel.surveillance import BASE_COLUMNS, SurveillanceDataset


def build_surveillance(
    pct_by_year: dict[int, np.ndarray],
    case_by_year: dict[int, np.ndarray],
    maxlag: int,
    refs: dict[int, int] | None = None,
    window_days: int = 14,
    year_length: float = 365.25,
) -> SurveillanceDataset:
    """Assemble a schema-valid dataset from per-year pct_absent and Case arrays."""
    refs = refs or {}
    columns = list(BASE_COLUMNS) + [f"lag{k}" for k in range(maxlag + 1)]
    blocks = []
    for year in sorted(pct_by_year):
        pct = np.asarray(pct_by_year[year], dtype=float)
        case = np.asarray(case_by_year[year], dtype=np.int64)
        T = len(pct)
        dates = np.arange(1, T + 1, dtype=np.int64)
        phase = 2.0 * np.pi * dates / year_length
        window = np.zeros(T, dtype=np.int64)
        ref_flag = np.zeros(T, dtype=np.int64)
        ref = refs.get(year)
        if ref is not None:
            window[(dates >= ref - window_days) & (dates <= ref)] = 1
            ref_flag[dates == ref] = 1
        block = {
            "Date": dates,
            "ScYr": np.full(T, year, dtype=np.int64),
            "pct_absent": pct,
            "absent": np.rint(pct * 1000).astype(np.int64),
            "absent_sick": np.zeros(T, dtype=np.int64),
            "new_inf": case.copy(),
            "reported_cases": case.copy(),
            "Case": case,
            "sinterm": np.sin(phase),
            "costerm": np.cos(phase),
            "window": window,
            "ref_date": ref_flag,
        }
        for k in range(maxlag + 1):
            lag = np.full(T, np.nan)
            if k < T:
                lag[k:] = pct[: T - k]
            block[f"lag{k}"] = lag
        blocks.append(block)
    data = {c: np.concatenate([b[c] for b in blocks]) for c in columns}
    return SurveillanceDataset.from_columns(columns, data)


def simulate_lag0_world(
    n_years: int,
    T: int,
    beta: tuple[float, float, float, float],
    tau_sq: float,
    seed: int,
    maxlag: int = 1,
) -> tuple[SurveillanceDataset, np.ndarray]:
    """Simulate Case outcomes from the lag-0 logistic model with known beta.

    Returns the dataset and the per-year random intercepts actually used.
    """
    rng = np.random.default_rng(seed)
    b0, b1, bs, bc = beta
    gammas = rng.normal(0.0, np.sqrt(tau_sq), size=n_years) if tau_sq > 0 else np.zeros(n_years)
    pct_by_year = {}
    case_by_year = {}
    for j in range(1, n_years + 1):
        pct = rng.uniform(0.02, 0.10, size=T)
        dates = np.arange(1, T + 1)
        phase = 2.0 * np.pi * dates / 365.25
        eta = b0 + b1 * pct + bs * np.sin(phase) + bc * np.cos(phase) + gammas[j - 1]
        theta = 1.0 / (1.0 + np.exp(-eta))
        case = (rng.random(T) < theta).astype(np.int64)
        pct_by_year[j] = pct
        case_by_year[j] = case
    return build_surveillance(pct_by_year, case_by_year, maxlag=maxlag), gammas
