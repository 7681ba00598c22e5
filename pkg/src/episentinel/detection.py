"""Seasonal mixed-effects lag-logistic detection model.

For day t of school year j the epidemic indicator Y_tj is Bernoulli with

    logit(theta_tj) = beta0 + sum_{k=0}^{l} beta_{k+1} * lag_k(t)
                      + beta_{l+2} * sinterm(t) + beta_{l+3} * costerm(t)
                      + gamma_j,        gamma_j ~ Normal(0, tau_sq).

The scalar per-year random intercepts are integrated out by a Laplace
approximation: with gamma_j^ the per-year conditional mode and
A_j = sum_t theta(1-theta), each year contributes

    loglik_j(gamma_j^) - gamma_j^2 / (2 tau_sq) - 0.5 * log(1 + tau_sq * A_j),

which reduces exactly to the ordinary logistic log-likelihood at tau_sq = 0.
The objective is maximized by BFGS on (beta, log tau_sq) with analytic
gradients; everything is deterministic, with no randomness in fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, EvaluationError, InvalidParameterError
from .surveillance import SurveillanceDataset

_IRLS_CAP = 100
_BFGS_CAP = 200
_REL_TOL = 1e-8
_RIDGE = 1e-4
_SEPARATION_SCALE = 30.0  # |X @ beta| beyond this pins probabilities at 0/1
_TAU_FLOOR = 1e-6  # below this the variance is treated as the 0 boundary
_INNER_TOL = 1e-11


@dataclass(frozen=True)
class LagLogisticSpec:
    """Tuning pair: lag size l and alert threshold theta*."""

    lag_size: int
    threshold: float

    def validate(self, maxlag: int | None = None) -> None:
        if self.lag_size < 0:
            raise InvalidParameterError(f"lag_size must be >= 0 (got {self.lag_size})")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidParameterError(
                f"threshold must be strictly inside (0, 1) (got {self.threshold})"
            )
        if maxlag is not None and self.lag_size > maxlag:
            raise InvalidParameterError(
                f"lag_size {self.lag_size} exceeds dataset maxlag {maxlag}"
            )


@dataclass
class ModelFit:
    """A fitted model: coefficients, variance, per-year intercepts, diagnostics."""

    lag_size: int
    beta: np.ndarray
    tau_sq: float
    gamma: dict[int, float]
    log_likelihood: float
    converged: bool
    iterations: int
    ridge_stabilized: bool = False
    training_years: tuple[int, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "lag_size": self.lag_size,
            "beta": [float(b) for b in self.beta],
            "tau_sq": float(self.tau_sq),
            "gamma": {str(y): float(g) for y, g in sorted(self.gamma.items())},
            "log_likelihood": float(self.log_likelihood),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "ridge_stabilized": bool(self.ridge_stabilized),
            "training_years": [int(y) for y in self.training_years],
        }


@dataclass
class AlertTrace:
    """Per-day predicted risk and the days where it crossed the threshold."""

    year: int
    theta: np.ndarray
    alert_days: np.ndarray


def build_design(
    dataset: SurveillanceDataset,
    years: tuple[int, ...],
    lag_size: int,
    prefix_of: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """Design matrix for the given training years at one lag size.

    Rows are sorted by (year, Date) so results are invariant to input row
    order; rows with any missing feature (Date <= lag_size) are excluded.
    ``prefix_of`` = (year, cut_day) optionally adds the target year's rows
    with Date <= cut_day.

    Returns (X, y, year_index, year_list): X has columns
    [1, lag0..lag_l, sinterm, costerm]; year_index maps each row to its
    position in year_list.
    """
    if lag_size < 0 or lag_size > dataset.maxlag:
        raise InvalidParameterError(
            f"lag_size must be in [0, {dataset.maxlag}] (got {lag_size})"
        )
    if not years:
        raise ConfigurationError("training_years must be nonempty")
    known = set(dataset.years())
    missing = [y for y in years if y not in known]
    if missing:
        raise ConfigurationError(f"training years {missing} not present in dataset")
    scyr = dataset.data["ScYr"]
    mask = np.isin(scyr, list(years))
    if prefix_of is not None:
        target, cut = prefix_of
        mask |= (scyr == target) & (dataset.data["Date"] <= cut)
    feature_names = [f"lag{k}" for k in range(lag_size + 1)] + ["sinterm", "costerm"]
    feats = np.column_stack([dataset.data[c] for c in feature_names])
    usable = mask & np.all(np.isfinite(feats), axis=1)
    order = np.lexsort((dataset.data["Date"][usable], scyr[usable]))
    idx = np.flatnonzero(usable)[order]
    X = np.column_stack([np.ones(idx.size), feats[idx]])
    y = dataset.data["Case"][idx].astype(float)
    row_years = scyr[idx]
    year_list = sorted(int(v) for v in np.unique(row_years))
    lookup = {v: i for i, v in enumerate(year_list)}
    year_index = np.array([lookup[int(v)] for v in row_years], dtype=np.int64)
    return X, y, year_index, year_list


def _loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # sum y*eta - log(1 + exp(eta)), numerically stable
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _year_blocks(year_index: np.ndarray, n_years: int) -> list[slice]:
    starts = np.searchsorted(year_index, np.arange(n_years), side="left")
    ends = np.searchsorted(year_index, np.arange(n_years), side="right")
    return [slice(int(a), int(b)) for a, b in zip(starts, ends)]


def _solve_gamma(
    X: np.ndarray,
    y: np.ndarray,
    beta: np.ndarray,
    tau_sq: float,
    year_index: np.ndarray,
    n_years: int,
) -> np.ndarray:
    """Per-year conditional modes of the random intercepts.

    Each year's penalized log-likelihood is strictly concave in its scalar
    intercept, so safeguarded Newton from zero finds the unique mode.
    """
    gamma = np.zeros(n_years)
    xb = X @ beta

    def penalized(gam: np.ndarray) -> np.ndarray:
        eta = xb + gam[year_index]
        per_row = y * eta - np.logaddexp(0.0, eta)
        return (
            np.bincount(year_index, weights=per_row, minlength=n_years)
            - gam * gam / (2.0 * tau_sq)
        )

    q = penalized(gamma)
    for _ in range(60):
        theta = expit(xb + gamma[year_index])
        g = np.bincount(year_index, weights=y - theta, minlength=n_years) - gamma / tau_sq
        if np.max(np.abs(g)) < _INNER_TOL:
            break
        w = theta * (1.0 - theta)
        h = np.bincount(year_index, weights=w, minlength=n_years) + 1.0 / tau_sq
        step = g / h
        scale = np.ones(n_years)
        for _ in range(30):
            q_cand = penalized(gamma + scale * step)
            worse = q_cand < q - 1e-12
            if not np.any(worse):
                break
            scale[worse] *= 0.5
        gamma = gamma + scale * step
        q = penalized(gamma)
    return gamma


def marginal_loglik(
    beta: np.ndarray,
    tau_sq: float,
    X: np.ndarray,
    y: np.ndarray,
    year_index: np.ndarray,
    n_years: int,
    ridge: float = 0.0,
) -> float:
    """Laplace-approximated marginal log-likelihood; exact logistic at tau_sq=0."""
    if tau_sq < 0:
        raise InvalidParameterError(f"tau_sq must be >= 0 (got {tau_sq})")
    if tau_sq == 0.0:
        value = _loglik(X @ beta, y)
    else:
        gamma = _solve_gamma(X, y, beta, tau_sq, year_index, n_years)
        eta = X @ beta + gamma[year_index]
        theta = expit(eta)
        w = theta * (1.0 - theta)
        A = np.bincount(year_index, weights=w, minlength=n_years)
        value = (
            _loglik(eta, y)
            - float(np.sum(gamma**2)) / (2.0 * tau_sq)
            - 0.5 * float(np.sum(np.log1p(tau_sq * A)))
        )
    if ridge > 0.0:
        value -= 0.5 * ridge * float(beta @ beta)
    return value


def _objective_and_grad(
    params: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    year_index: np.ndarray,
    n_years: int,
    blocks: list[slice],
    ridge: float,
) -> tuple[float, np.ndarray]:
    """Objective F(beta, psi=log tau_sq) and its analytic gradient.

    The gradient accounts for the implicit dependence of the per-year modes
    gamma_j^ and of the log-determinant term on (beta, tau_sq).
    """
    p = X.shape[1]
    beta = params[:p]
    psi = params[p]
    tau_sq = float(np.exp(psi))
    if tau_sq < 1e-12:
        # tau_sq -> 0 limit: gamma^ -> 0 and the objective tends to the plain
        # logistic log-likelihood; evaluate that limit in stable form
        eta = X @ beta
        theta = expit(eta)
        w = theta * (1.0 - theta)
        value = _loglik(eta, y)
        grad_beta = X.T @ (y - theta)
        s = np.bincount(year_index, weights=y - theta, minlength=n_years)
        A = np.bincount(year_index, weights=w, minlength=n_years)
        grad_psi = tau_sq * float(np.sum(s * s - A)) / 2.0
        if ridge > 0.0:
            value -= 0.5 * ridge * float(beta @ beta)
            grad_beta = grad_beta - ridge * beta
        return value, np.concatenate([grad_beta, [grad_psi]])
    gamma = _solve_gamma(X, y, beta, tau_sq, year_index, n_years)
    eta = X @ beta + gamma[year_index]
    theta = expit(eta)
    w = theta * (1.0 - theta)
    wp = w * (1.0 - 2.0 * theta)  # d w / d eta
    A = np.bincount(year_index, weights=w, minlength=n_years)
    H = A + 1.0 / tau_sq
    value = (
        _loglik(eta, y)
        - float(np.sum(gamma**2)) / (2.0 * tau_sq)
        - 0.5 * float(np.sum(np.log1p(tau_sq * A)))
    )
    grad_beta = X.T @ (y - theta)
    grad_psi = 0.0
    sigma4 = tau_sq * tau_sq
    for j, block in enumerate(blocks):
        Xj = X[block]
        Mw = Xj.T @ w[block]  # d A_j / d beta (through eta), per coefficient
        Mwp = Xj.T @ wp[block]
        WPj = float(np.sum(wp[block]))
        Hj = H[j]
        grad_beta += -Mwp / (2.0 * Hj) + WPj * Mw / (2.0 * Hj * Hj)
        dF_dsigma_j = (
            gamma[j] ** 2 / (2.0 * sigma4)
            - A[j] / (2.0 * (1.0 + tau_sq * A[j]))
            - WPj * gamma[j] / (2.0 * sigma4 * Hj * Hj)
        )
        grad_psi += dF_dsigma_j
    grad_psi *= tau_sq  # chain rule through psi = log tau_sq
    if ridge > 0.0:
        value -= 0.5 * ridge * float(beta @ beta)
        grad_beta = grad_beta - ridge * beta
    return value, np.concatenate([grad_beta, [grad_psi]])


def laplace_objective_grad(
    beta: np.ndarray,
    tau_sq: float,
    X: np.ndarray,
    y: np.ndarray,
    year_index: np.ndarray,
    n_years: int,
    ridge: float = 0.0,
) -> tuple[float, np.ndarray, float]:
    """Public (value, d/dbeta, d/dtau_sq) of the Laplace objective."""
    if not tau_sq > 0:
        raise InvalidParameterError(
            f"gradient evaluation needs tau_sq > 0 (got {tau_sq}); "
            f"use marginal_loglik for the boundary value"
        )
    blocks = _year_blocks(year_index, n_years)
    params = np.concatenate([beta, [np.log(tau_sq)]])
    value, grad = _objective_and_grad(params, X, y, year_index, n_years, blocks, ridge)
    return value, grad[:-1], float(grad[-1] / tau_sq)


def _irls(
    X: np.ndarray, y: np.ndarray, ridge: float = 0.0
) -> tuple[np.ndarray, bool, int, bool]:
    """Fixed-effects logistic fit by Newton steps with step halving.

    Returns (beta, converged, iterations, separation_suspected).
    """
    n, p = X.shape
    beta = np.zeros(p)
    ll = _loglik(X @ beta, y) - 0.5 * ridge * float(beta @ beta)
    converged = False
    it = 0
    for it in range(1, _IRLS_CAP + 1):
        theta = expit(X @ beta)
        w = np.maximum(theta * (1.0 - theta), 1e-10)
        hessian = (X * w[:, None]).T @ X + ridge * np.eye(p)
        score = X.T @ (y - theta) - ridge * beta
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:  # collinear design; defer to the ridge refit
            break
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            cand_ll = _loglik(X @ cand, y) - 0.5 * ridge * float(cand @ cand)
            if cand_ll >= ll - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        new_ll = _loglik(X @ beta, y) - 0.5 * ridge * float(beta @ beta)
        if abs(new_ll - ll) <= _REL_TOL * (abs(ll) + 1.0) and np.max(np.abs(scale * step)) < 1e-6:
            ll = new_ll
            converged = True
            break
        ll = new_ll
    separated = (not converged) or bool(np.max(np.abs(X @ beta)) > _SEPARATION_SCALE)
    return beta, converged, it, separated


def _bfgs_max(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    max_iter: int = _BFGS_CAP,
    rel_tol: float = _REL_TOL,
) -> tuple[np.ndarray, float, bool, int]:
    """Maximize a smooth function with BFGS + Armijo backtracking."""
    x = x0.copy()
    f, g = fun_grad(x)
    Hinv = np.eye(x.size)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < 1e-9 * (abs(f) + 1.0):
            converged = True
            break
        d = Hinv @ g  # ascent direction
        slope = float(g @ d)
        if slope <= 0.0:  # curvature info went bad; reset to steepest ascent
            Hinv = np.eye(x.size)
            d = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                converged = True
                break
        step = 1.0
        accepted = False
        for _ in range(40):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no ascent possible beyond noise: stationary
            break
        s = x_new - x
        y_m = -(g_new - g)  # gradient change of the negated (minimized) objective
        sy = float(s @ y_m)
        if sy > 1e-12:  # curvature condition keeps Hinv positive definite
            rho = 1.0 / sy
            I = np.eye(x.size)
            Hinv = (I - rho * np.outer(s, y_m)) @ Hinv @ (I - rho * np.outer(y_m, s)) + rho * np.outer(s, s)
        delta = f_new - f
        x, f, g = x_new, f_new, g_new
        if abs(delta) <= rel_tol * (abs(f) + 1.0):
            converged = True
            break
    return x, f, converged, it


def fit(
    dataset: SurveillanceDataset,
    training_years: tuple[int, ...] | list[int] | set[int],
    lag_size: int,
    prefix_of: tuple[int, int] | None = None,
) -> ModelFit:
    """Fit the detection model on complete prior school years.

    Single-year training (no between-year contrast) and variance estimates
    collapsing to the 0 boundary both reduce to the plain fixed-effects
    logistic fit. Complete separation falls back to a ridge-stabilized fit
    (penalty 1e-4) flagged via ``ridge_stabilized``.
    """
    years = tuple(sorted(int(y) for y in set(training_years)))
    X, y, year_index, year_list = build_design(dataset, years, lag_size, prefix_of=prefix_of)
    if X.shape[0] == 0:
        raise EvaluationError(
            f"no usable training rows for lag {lag_size} over years {years}",
            stage="detection",
        )
    n_years = len(year_list)
    beta0, irls_conv, irls_iters, separated = _irls(X, y)
    ridge = 0.0
    ridge_flag = False
    if separated:
        ridge = _RIDGE
        ridge_flag = True
        beta0, irls_conv, irls_iters, _ = _irls(X, y, ridge=ridge)
    if n_years == 1:
        ll = _loglik(X @ beta0, y)
        return ModelFit(
            lag_size=lag_size,
            beta=beta0,
            tau_sq=0.0,
            gamma={year_list[0]: 0.0},
            log_likelihood=ll,
            converged=irls_conv,
            iterations=irls_iters,
            ridge_stabilized=ridge_flag,
            training_years=years,
        )
    blocks = _year_blocks(year_index, n_years)
    x0 = np.concatenate([beta0, [np.log(0.1)]])

    def fun_grad(params: np.ndarray) -> tuple[float, np.ndarray]:
        return _objective_and_grad(params, X, y, year_index, n_years, blocks, ridge)

    x_hat, f_hat, converged, iters = _bfgs_max(fun_grad, x0)
    beta_hat = x_hat[:-1]
    tau_sq = float(np.exp(x_hat[-1]))
    if tau_sq < _TAU_FLOOR:
        # variance boundary: the random effect degenerates; refit fixed effects
        beta_hat, irls_conv, irls_iters, _ = _irls(X, y, ridge=ridge)
        ll = _loglik(X @ beta_hat, y)
        return ModelFit(
            lag_size=lag_size,
            beta=beta_hat,
            tau_sq=0.0,
            gamma={v: 0.0 for v in year_list},
            log_likelihood=ll,
            converged=converged and irls_conv,
            iterations=iters + irls_iters,
            ridge_stabilized=ridge_flag,
            training_years=years,
        )
    gamma = _solve_gamma(X, y, beta_hat, tau_sq, year_index, n_years)
    if not np.all(np.isfinite(beta_hat)) or not np.all(np.isfinite(gamma)):
        converged = False
    return ModelFit(
        lag_size=lag_size,
        beta=beta_hat,
        tau_sq=tau_sq,
        gamma={v: float(g) for v, g in zip(year_list, gamma)},
        log_likelihood=float(f_hat),
        converged=converged,
        iterations=iters,
        ridge_stabilized=ridge_flag,
        training_years=years,
    )


def predict_daily_risk(
    fit_result: ModelFit, year_rows: SurveillanceDataset, lag_size: int
) -> np.ndarray:
    """Per-day predicted probability for a (usually unseen) school year.

    Unseen years get gamma = 0; days with missing lag features get NaN.
    """
    if lag_size != fit_result.lag_size:
        raise ConfigurationError(
            f"fit was built for lag_size {fit_result.lag_size}, asked to predict with {lag_size}"
        )
    expected_len = lag_size + 4
    if len(fit_result.beta) != expected_len:
        raise ConfigurationError(
            f"coefficient vector has length {len(fit_result.beta)}, expected {expected_len}"
        )
    feature_names = [f"lag{k}" for k in range(lag_size + 1)] + ["sinterm", "costerm"]
    feats = np.column_stack([year_rows.data[c] for c in feature_names])
    gamma = np.array(
        [fit_result.gamma.get(int(v), 0.0) for v in year_rows.data["ScYr"]]
    )
    eta = fit_result.beta[0] + feats @ fit_result.beta[1:] + gamma
    theta = expit(eta)
    theta[~np.all(np.isfinite(feats), axis=1)] = np.nan
    return theta


def raise_alerts(
    theta: np.ndarray,
    spec: LagLogisticSpec,
    year_start: int,
    ref: int,
    dates: np.ndarray | None = None,
    year: int = 0,
) -> AlertTrace:
    """Days (within [year_start, ref]) whose predicted risk exceeds theta*."""
    spec.validate()
    if dates is None:
        dates = np.arange(1, len(theta) + 1, dtype=np.int64)
    if not 1 <= ref <= int(dates.max()):
        raise ConfigurationError(f"reference day {ref} outside the year horizon")
    theta = np.asarray(theta, dtype=float)
    with np.errstate(invalid="ignore"):
        mask = (theta > spec.threshold) & (dates >= year_start) & (dates <= ref)
    mask &= np.isfinite(theta)
    return AlertTrace(year=year, theta=theta, alert_days=dates[mask])
