"""Periodic-rebalance backtester with proportional costs and drifting weights."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classical import WeightVector
from .data import PricePanel, ReturnPanel, compute_returns
from .errors import BacktestError
from .metrics import TRADING_DAYS, summarize, value_path
from .strategies import AllocationContext, StrategyConfig, StrategyKind, allocate

MONITOR_WINDOW = 63


@dataclass(frozen=True)
class BacktestConfig:
    interval: int = 21
    cost_rate: float = 0.001
    cap: float = 0.6
    rf_annual: float = 0.0
    initial: float = 1.0
    test_start: str = "2021-01-01"
    test_end: str | None = None
    max_volatility: float | None = None
    max_drawdown: float | None = None

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("rebalance interval must be >= 1")
        if self.cost_rate < 0:
            raise ValueError("cost rate must be non-negative")
        if self.initial <= 0:
            raise ValueError("initial value must be positive")


@dataclass
class Simulation:
    values: np.ndarray            # value after each day (initial value excluded)
    returns: np.ndarray           # net daily portfolio returns
    daily_weights: np.ndarray     # holdings at the start of each day, after any rebalance
    rebalance_index: list
    rebalance_weights: list
    turnover: list


def turnover(prev, nxt) -> float:
    """One-way turnover ``sum |next - prev|``."""
    if isinstance(prev, WeightVector) and isinstance(nxt, WeightVector):
        if prev.tickers != nxt.tickers:
            raise ValueError("weight vectors cover different tickers")
        prev, nxt = prev.w, nxt.w
    a = np.asarray(prev, dtype=np.float64)
    b = np.asarray(nxt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("weight vectors differ in length")
    return float(np.abs(b - a).sum())


def simulate(returns: np.ndarray, allocator: Callable[[int, np.ndarray | None], np.ndarray],
             interval: int = 21, cost_rate: float = 0.001, initial: float = 1.0) -> Simulation:
    """Run a weight schedule through daily asset returns.

    ``allocator(t, holdings)`` is called on days ``0, interval, 2*interval, ...``
    with the drifted holdings (None before the first trade) and returns target
    weights. The first trade starts from cash, so its turnover is the gross
    exposure. Costs hit that day's return; between trades weights drift.
    """
    r = np.asarray(returns, dtype=np.float64)
    days, n = r.shape
    value = initial
    held = None
    values, rets, daily = np.empty(days), np.empty(days), np.empty((days, n))
    reb_idx, reb_w, turns = [], [], []
    for t in range(days):
        cost = 0.0
        if t % interval == 0:
            w = np.asarray(allocator(t, None if held is None else held.copy()), dtype=np.float64)
            if w.shape != (n,) or not np.all(np.isfinite(w)):
                raise BacktestError(f"allocator returned invalid weights on day {t}")
            turn = turnover(np.zeros(n) if held is None else held, w)
            cost = cost_rate * turn
            reb_idx.append(t)
            reb_w.append(w.copy())
            turns.append(turn)
            held = w
        daily[t] = held
        gross = float(held @ r[t])
        net = gross - cost
        if not math.isfinite(net) or net <= -1.0:
            raise BacktestError(f"portfolio return {net} on day {t} is not usable")
        value *= 1.0 + net
        values[t], rets[t] = value, net
        held = held * (1.0 + r[t]) / (1.0 + gross) if gross > -1.0 else held
    return Simulation(values, rets, daily, reb_idx, reb_w, turns)


def risk_monitor(returns: np.ndarray, dates, max_volatility=None, max_drawdown=None,
                 window: int = MONITOR_WINDOW) -> list[dict]:
    """Breach events for trailing volatility and running drawdown limits.

    Only the first day of each breach episode is reported; nothing is traded.
    """
    events = []
    r = np.asarray(returns, dtype=np.float64)
    if max_volatility is not None and len(r) >= window:
        vol = np.array([np.std(r[t - window + 1:t + 1], ddof=1) for t in range(window - 1, len(r))])
        vol *= math.sqrt(TRADING_DAYS)
        over = vol > max_volatility
        for i in np.flatnonzero(over & ~np.concatenate([[False], over[:-1]])):
            events.append({"date": str(dates[i + window - 1]), "kind": "volatility",
                           "value": float(vol[i]), "limit": float(max_volatility)})
    if max_drawdown is not None:
        v = value_path(r)
        dd = (1.0 - v / np.maximum.accumulate(v))[1:]
        over = dd > max_drawdown
        for i in np.flatnonzero(over & ~np.concatenate([[False], over[:-1]])):
            events.append({"date": str(dates[i]), "kind": "drawdown", "value": float(dd[i]),
                           "limit": float(max_drawdown)})
    return sorted(events, key=lambda e: (e["date"], e["kind"]))


@dataclass
class BacktestResult:
    strategy: str
    tickers: tuple
    dates: np.ndarray
    values: np.ndarray
    returns: np.ndarray
    daily_weights: np.ndarray
    rebalance_dates: list
    rebalance_weights: np.ndarray
    turnover: list
    metrics: dict
    config: dict
    breaches: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"strategy": self.strategy, "tickers": list(self.tickers),
                "start": str(self.dates[0]), "end": str(self.dates[-1]),
                "days": len(self.dates), "metrics": self.metrics, "config": self.config,
                "rebalances": [{"date": d, "turnover": t, "weights": dict(zip(self.tickers, map(float, w)))}
                               for d, t, w in zip(self.rebalance_dates, self.turnover,
                                                  self.rebalance_weights)],
                "risk_breaches": self.breaches}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=1) + "\n"

    def values_csv(self) -> str:
        lines = ["date,value,return"]
        lines += [f"{d},{v!r},{r!r}" for d, v, r in
                  zip(self.dates.astype(str), self.values.tolist(), self.returns.tolist())]
        return "\n".join(lines) + "\n"

    def weights_csv(self, daily: bool = True) -> str:
        lines = ["date," + ",".join(self.tickers)]
        if daily:
            rows = zip(self.dates.astype(str), self.daily_weights.tolist())
        else:
            rows = zip(self.rebalance_dates, self.rebalance_weights.tolist())
        lines += [d + "," + ",".join(repr(x) for x in w) for d, w in rows]
        return "\n".join(lines) + "\n"

    def write(self, directory) -> dict:
        """Write ``<name>.json``, ``<name>_values.csv`` and ``<name>_weights.csv``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"json": d / f"{self.strategy}.json", "values": d / f"{self.strategy}_values.csv",
                 "weights": d / f"{self.strategy}_weights.csv"}
        paths["json"].write_text(self.to_json(), encoding="utf-8")
        paths["values"].write_text(self.values_csv(), encoding="utf-8")
        paths["weights"].write_text(self.weights_csv(), encoding="utf-8")
        return paths


def compute_metrics(returns, rf_annual: float, initial: float, turnovers) -> dict:
    m = summarize(returns, rf_annual, initial)
    m["total_turnover"] = float(np.sum(turnovers))
    return m


def period_indices(panel: ReturnPanel, config: BacktestConfig) -> np.ndarray:
    """Indices of return rows inside the configured test period."""
    mask = panel.dates >= np.datetime64(config.test_start, "D")
    if config.test_end is not None:
        mask &= panel.dates <= np.datetime64(config.test_end, "D")
    return np.flatnonzero(mask)


def run_backtest(kind: StrategyKind | str, panel: PricePanel | ReturnPanel,
                 config: BacktestConfig = BacktestConfig(), models: dict | None = None,
                 strategy_config: StrategyConfig | None = None) -> BacktestResult:
    """Simulate one strategy over the test range of ``panel``.

    On each rebalance day the strategy sees every return dated before it.
    """
    kind = StrategyKind.parse(kind) if isinstance(kind, str) else kind
    returns = compute_returns(panel) if isinstance(panel, PricePanel) else panel
    idx = period_indices(returns, config)
    if len(idx) < 2 * config.interval:
        raise BacktestError(f"test range has {len(idx)} days; need at least {2 * config.interval}")
    if np.any(np.diff(idx) != 1):
        raise BacktestError("test range is not contiguous")
    scfg = strategy_config or StrategyConfig(cap=config.cap, rf_annual=config.rf_annual)
    models = models or {}
    first = int(idx[0])

    def allocator(t, held):
        i = first + t
        prev = None if held is None else WeightVector(returns.tickers, held)
        ctx = AllocationContext(returns.rows(slice(0, i)), returns.dates[i], prev, models, scfg)
        out = allocate(kind, ctx)
        out.check(config.cap if kind not in (StrategyKind.EQUAL_WEIGHT, StrategyKind.SIXTY_FORTY)
                  else 1.0)
        return out.w

    sim = simulate(returns.returns[idx], allocator, config.interval, config.cost_rate, config.initial)
    dates = returns.dates[idx]
    metrics = compute_metrics(sim.returns, config.rf_annual, config.initial, sim.turnover)
    breaches = risk_monitor(sim.returns, dates, config.max_volatility, config.max_drawdown)
    return BacktestResult(kind.value, returns.tickers, dates, sim.values, sim.returns,
                          sim.daily_weights, [str(dates[i]) for i in sim.rebalance_index],
                          np.array(sim.rebalance_weights), sim.turnover, metrics,
                          asdict(config), breaches)


def read_values_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dates, values and returns from a stored ``_values.csv``."""
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if lines[0] != "date,value,return":
        raise ValueError(f"{path}: unexpected header")
    rows = [ln.split(",") for ln in lines[1:]]
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    return dates, np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows])


def read_weights_csv(path) -> tuple[np.ndarray, tuple, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    tickers = tuple(lines[0].split(",")[1:])
    rows = [ln.split(",") for ln in lines[1:]]
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    return dates, tickers, np.array([[float(x) for x in r[1:]] for r in rows])
