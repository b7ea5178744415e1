"""Covariance estimators and classical allocators (Markowitz, CAPM, Black-Litterman).

Optimizers work in daily units: ``mu`` is a daily expected simple return and
``sigma`` a daily covariance. Risk-free rates are quoted annually and divided
by :data:`TRADING_DAYS` before use.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import ReturnPanel
from .errors import ConstraintError, DataError, NumericError
from .numerics import PSD_FLOOR, nearest_psd, project_capped_simplex, symmetrize

TRADING_DAYS = 252


@dataclass(frozen=True)
class CovarianceEstimate:
    tickers: tuple
    sigma: np.ndarray
    source: str = "empirical"

    def repaired(self, floor: float = PSD_FLOOR) -> "CovarianceEstimate":
        return CovarianceEstimate(self.tickers, nearest_psd(self.sigma, floor), self.source)


@dataclass(frozen=True)
class ExpectedReturns:
    tickers: tuple
    mu: np.ndarray


@dataclass(frozen=True)
class WeightVector:
    tickers: tuple
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.shape != (len(self.tickers),):
            raise ValueError("weight vector length does not match tickers")

    def check(self, cap: float = 1.0, tol: float = 1e-9) -> None:
        if abs(self.w.sum() - 1.0) > tol:
            raise ConstraintError(f"weights sum to {self.w.sum()}, not 1")
        if np.any(self.w < -tol) or np.any(self.w > cap + tol):
            raise ConstraintError(f"weights outside [0, {cap}]")

    def as_dict(self) -> dict:
        return dict(zip(self.tickers, map(float, self.w)))


@dataclass(frozen=True)
class MVOConstraints:
    mode: str = "max-sharpe"
    target: float | None = None
    rf_annual: float = 0.0
    cap: float = 0.6

    @property
    def rf_daily(self) -> float:
        return self.rf_annual / TRADING_DAYS


@dataclass(frozen=True)
class MarketViews:
    P: np.ndarray
    Q: np.ndarray
    omega: np.ndarray
    tau: float
    delta: float
    w_mkt: np.ndarray = field(default=None)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        if P.ndim != 2:
            raise ValueError("pick matrix must be 2-D (views x assets)")
        v = P.shape[0]
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=np.float64).reshape(v))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64).reshape(v, v))
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if v and np.any(np.diag(self.omega) <= 0):
            raise ValueError("omega diagonal must be positive")


# ---------------------------------------------------------------- estimators

def _matrix(returns) -> tuple[tuple, np.ndarray]:
    if isinstance(returns, ReturnPanel):
        return returns.tickers, returns.returns
    x = np.asarray(returns, dtype=np.float64)
    return tuple(str(i) for i in range(x.shape[1])), x


def auto_shrink_intensity(n_assets: int, n_obs: int) -> float:
    return n_assets / (n_assets + n_obs)


def shrink_covariance(emp: CovarianceEstimate, intensity: float | str = "auto",
                      n_obs: int | None = None) -> CovarianceEstimate:
    """Blend toward the diagonal: ``(1 - a) * S + a * diag(S)``.

    ``intensity="auto"`` uses ``n / (n + n_obs)``.
    """
    n = len(emp.tickers)
    if intensity == "auto":
        if n_obs is None:
            raise ValueError("auto intensity needs the number of observations")
        intensity = auto_shrink_intensity(n, n_obs)
    intensity = float(intensity)
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"shrinkage intensity {intensity} outside [0, 1]")
    if intensity == 0.0:
        return CovarianceEstimate(emp.tickers, emp.sigma.copy(), emp.source)
    s = emp.sigma
    out = (1.0 - intensity) * s + intensity * np.diag(np.diag(s))
    return CovarianceEstimate(emp.tickers, symmetrize(out), "shrunk")


def empirical_covariance(returns, window: int | None = None) -> CovarianceEstimate:
    """Sample covariance (n-1 denominator) over the trailing ``window`` rows.

    With fewer than ``n + 1`` observations the sample matrix is singular, so
    the automatic diagonal shrinkage is applied and the source tag says so.
    """
    tickers, x = _matrix(returns)
    if window is not None:
        x = x[-window:]
    t, n = x.shape
    if t < 2:
        raise DataError("need at least 2 observations for a covariance")
    xc = x - x.mean(axis=0)
    s = symmetrize(xc.T @ xc / (t - 1))
    est = CovarianceEstimate(tickers, s, "empirical")
    if t < n + 1:
        est = shrink_covariance(est, "auto", n_obs=t)
    return est


def trailing_mean(returns, window: int | None = None) -> ExpectedReturns:
    tickers, x = _matrix(returns)
    if window is not None:
        x = x[-window:]
    if len(x) == 0:
        raise DataError("no observations for expected returns")
    return ExpectedReturns(tickers, x.mean(axis=0))


# ---------------------------------------------------------------- Markowitz

def portfolio_sharpe(w, mu, sigma, rf_daily: float = 0.0) -> float:
    var = float(w @ sigma @ w)
    if var <= 0:
        return -np.inf
    return float((w @ mu - rf_daily) / np.sqrt(var))


def tangency_weights(mu, sigma, rf_daily: float = 0.0) -> np.ndarray | None:
    """Closed-form ``Sigma^-1 (mu - rf)`` normalised to sum 1, or None if undefined."""
    try:
        raw = np.linalg.solve(sigma, np.asarray(mu) - rf_daily)
    except np.linalg.LinAlgError:
        return None
    total = raw.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        return None
    return raw / total


def _ascend(f_and_grad, w0: np.ndarray, cap: float, step: float = 1e-2,
            max_iter: int = 5000, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Projected gradient ascent on the capped simplex.

    Step starts at ``step``; a step that lowers the objective is halved and
    retried, an accepted step grows by 1.5x (bounded by 1).
    """
    w = project_capped_simplex(w0, cap)
    fw, g = f_and_grad(w)
    for _ in range(max_iter):
        cand = project_capped_simplex(w + step * g, cap)
        fc, gc = f_and_grad(cand)
        if fc + 1e-15 < fw:
            step *= 0.5
            if step < 1e-12:
                break
            continue
        moved = float(np.max(np.abs(cand - w)))
        w, fw, g = cand, fc, gc
        step = min(step * 1.5, 1.0)
        if moved < tol:
            break
    return w, fw


def _max_sharpe(mu, sigma, rf_daily, cap) -> np.ndarray:
    n = len(mu)
    scale = float(np.mean(np.diag(sigma))) or 1.0
    s = sigma / scale
    excess = np.asarray(mu, dtype=np.float64) - rf_daily
    norm = float(np.linalg.norm(excess))

    if norm == 0.0:
        def f(w):
            sw = s @ w
            return -float(w @ sw), -2.0 * sw
        best, _ = _ascend(f, np.full(n, 1.0 / n), cap)
        return best

    e = excess / norm

    def f(w):
        sw = s @ w
        var = float(w @ sw)
        sd = np.sqrt(var)
        num = float(e @ w)
        return num / sd, e / sd - num * sw / (var * sd)

    starts = []
    tan = tangency_weights(e, s)
    if tan is not None and np.all(tan >= 0) and np.all(tan <= cap):
        starts.append(tan)
    elif tan is not None and np.all(np.isfinite(tan)):
        starts.append(project_capped_simplex(tan, cap))
    starts.append(np.full(n, 1.0 / n))
    results = [_ascend(f, w0, cap) for w0 in starts]
    best_w, best_f = max(results, key=lambda r: r[1])
    if best_f <= 0:
        # objective is no longer quasi-concave; widen the search to the corners
        for i in range(n):
            results.append(_ascend(f, np.eye(n)[i] * 10.0, cap))
        best_w, best_f = max(results, key=lambda r: r[1])
    return best_w


def _return_range(mu, cap) -> tuple[float, float]:
    def fill(order):
        w, left = np.zeros(len(mu)), 1.0
        for i in order:
            w[i] = min(cap, left)
            left -= w[i]
        return float(w @ mu)
    order = np.argsort(mu)
    return fill(order), fill(order[::-1])


def _min_variance_at(mu, sigma, p, cap) -> np.ndarray:
    n = len(mu)
    lo, hi = _return_range(mu, cap)
    tol = 1e-12 * max(1.0, abs(p))
    if p < lo - tol or p > hi + tol:
        raise ConstraintError(f"target return {p} not reachable under cap {cap} "
                              f"(range {lo}..{hi})")
    scale = float(np.mean(np.diag(sigma))) or 1.0
    s = sigma / scale
    mscale = float(np.max(np.abs(mu))) or 1.0
    m = mu / mscale
    cons = [{"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(n)},
            {"type": "eq", "fun": lambda w: (w @ m) - p / mscale, "jac": lambda w: m}]
    res = minimize(lambda w: w @ s @ w, np.full(n, 1.0 / n), jac=lambda w: 2 * s @ w,
                   bounds=[(0.0, cap)] * n, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": 1000})
    w = np.clip(res.x, 0.0, cap)
    w = w / w.sum()
    if abs(w @ mu - p) > 1e-6 or not res.success and abs(w @ mu - p) > 1e-8:
        raise ConstraintError(f"target-return solve failed: {res.message}")
    return w


def solve_mvo(mu: ExpectedReturns, sigma: CovarianceEstimate,
              constraints: MVOConstraints = MVOConstraints()) -> WeightVector:
    """Long-only Markowitz allocation on ``{sum w = 1, 0 <= w <= cap}``.

    ``max-sharpe`` maximises ``(w.mu - rf) / sqrt(w' Sigma w)`` by projected
    gradient ascent warm-started at the tangency portfolio. ``target-return``
    minimises variance subject to ``w.mu = target``.
    """
    m = np.asarray(mu.mu, dtype=np.float64)
    n = len(m)
    if constraints.cap * n < 1.0 - 1e-12:
        raise ConstraintError(f"cap {constraints.cap} infeasible for {n} assets")
    s = nearest_psd(sigma.sigma)
    if not np.all(np.isfinite(m)):
        raise NumericError("expected returns contain non-finite values")
    if constraints.mode == "max-sharpe":
        w = _max_sharpe(m, s, constraints.rf_daily, constraints.cap)
    elif constraints.mode == "target-return":
        if constraints.target is None:
            raise ConstraintError("target-return mode needs a target")
        w = _min_variance_at(m, s, constraints.target, constraints.cap)
    else:
        raise ValueError(f"unknown MVO mode {constraints.mode!r}")
    out = WeightVector(mu.tickers, w)
    out.check(constraints.cap)
    return out


# ---------------------------------------------------------------- CAPM

def beta(asset, market) -> float:
    a = np.asarray(asset, dtype=np.float64)
    m = np.asarray(market, dtype=np.float64)
    if a.shape != m.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("asset and market need equal lengths >= 2")
    var_m = np.var(m, ddof=1)
    if var_m <= 0:
        raise NumericError("market variance is zero")
    cov = np.sum((a - a.mean()) * (m - m.mean())) / (len(a) - 1)
    return float(cov / var_m)


def capm_expected_return(rf: float, beta_: float, market_return: float) -> float:
    return rf + beta_ * (market_return - rf)


# ---------------------------------------------------------------- Black-Litterman

def bl_implied_returns(views: MarketViews, sigma: CovarianceEstimate) -> ExpectedReturns:
    w = np.asarray(views.w_mkt, dtype=np.float64)
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("market weights must lie on the simplex")
    return ExpectedReturns(sigma.tickers, views.delta * (sigma.sigma @ w))


def bl_posterior_returns(views: MarketViews, sigma: CovarianceEstimate,
                         pi: ExpectedReturns) -> ExpectedReturns:
    """Posterior mean ``[(tS)^-1 + P'O^-1 P]^-1 [(tS)^-1 pi + P'O^-1 Q]``.

    Evaluated in the algebraically equal update form
    ``pi + tS P' (P tS P' + O)^-1 (Q - P pi)``, which needs only the v x v
    view system and returns ``pi`` untouched when there are no views.
    """
    prior = np.asarray(pi.mu, dtype=np.float64)
    P = views.P
    if P.shape[0] == 0:
        return ExpectedReturns(pi.tickers, prior.copy())
    ts = views.tau * nearest_psd(sigma.sigma)
    a = P @ ts @ P.T + views.omega
    try:
        adj = np.linalg.solve(a, views.Q - P @ prior)
    except np.linalg.LinAlgError as exc:
        raise NumericError("view system is singular") from exc
    post = prior + ts @ P.T @ adj
    if not np.all(np.isfinite(post)):
        raise NumericError("posterior returns are not finite")
    return ExpectedReturns(pi.tickers, post)
