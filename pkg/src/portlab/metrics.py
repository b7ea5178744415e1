"""Performance statistics for a daily portfolio return series."""
from __future__ import annotations

import math

import numpy as np

TRADING_DAYS = 252
MIN_VOLATILITY = 1e-12


def cumulative_return(returns) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if np.any(r <= -1.0):
        raise ValueError("daily returns must exceed -1")
    return float(np.prod(1.0 + r) - 1.0)


def annualized_return(cr: float, num_days: int) -> float:
    if num_days < 1:
        raise ValueError("need at least one day")
    if cr <= -1.0:
        raise ValueError("cumulative return must exceed -1")
    return float((1.0 + cr) ** (TRADING_DAYS / num_days) - 1.0)


def annualized_volatility(returns) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError("need at least 2 returns for a volatility")
    return float(np.std(r, ddof=1) * math.sqrt(TRADING_DAYS))


def sharpe_ratio(ar: float, rf: float, av: float) -> float | None:
    """Annualised Sharpe; ``None`` when volatility is (numerically) zero."""
    if av < MIN_VOLATILITY:
        return None
    return float((ar - rf) / av)


def max_drawdown(values) -> float:
    """Largest peak-to-trough fall as a non-negative fraction (running peak, one pass)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty value series")
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def value_path(returns, initial: float = 1.0) -> np.ndarray:
    """Initial value followed by the compounded value after each day."""
    r = np.asarray(returns, dtype=np.float64)
    return initial * np.concatenate([[1.0], np.cumprod(1.0 + r)])


def summarize(returns, rf_annual: float = 0.0, initial: float = 1.0) -> dict:
    r = np.asarray(returns, dtype=np.float64)
    cr = cumulative_return(r)
    ar = annualized_return(cr, len(r))
    av = annualized_volatility(r)
    return {"cumulative_return": cr, "annualized_return": ar, "annualized_volatility": av,
            "sharpe_ratio": sharpe_ratio(ar, rf_annual, av),
            "max_drawdown": max_drawdown(value_path(r, initial))}
