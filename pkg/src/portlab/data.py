"""Price ingestion, returns, technical features, standardization and splits."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FetchError, ParseError

log = logging.getLogger(__name__)

DEFAULT_TICKERS = ("AAPL", "TLT", "AMZN", "SPY", "EFA", "GLD", "MSFT")
DEFAULT_ENDPOINT = "https://query1.finance.yahoo.com/v8/finance/chart/{symbol}"


def _as_dates(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


def _to_date(value) -> np.datetime64:
    return np.datetime64(value, "D")


@dataclass(frozen=True)
class PricePanel:
    dates: np.ndarray
    tickers: tuple
    prices: np.ndarray
    repairs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=np.float64))
        if self.prices.shape != (len(self.dates), len(self.tickers)):
            raise DataError(f"price matrix {self.prices.shape} does not match "
                            f"{len(self.dates)} dates x {len(self.tickers)} tickers")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")

    def __len__(self):
        return len(self.dates)

    def rows(self, sl) -> "PricePanel":
        return PricePanel(self.dates[sl], self.tickers, self.prices[sl])


@dataclass(frozen=True)
class ReturnPanel:
    """Simple daily returns; row ``t`` is the return realised on ``dates[t]``."""

    dates: np.ndarray
    tickers: tuple
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=np.float64))
        if self.returns.shape != (len(self.dates), len(self.tickers)):
            raise DataError("return matrix does not match dates x tickers")

    def __len__(self):
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    def rows(self, sl) -> "ReturnPanel":
        return ReturnPanel(self.dates[sl], self.tickers, self.returns[sl])

    def before(self, date) -> "ReturnPanel":
        """Rows dated strictly before ``date``."""
        return self.rows(slice(0, int(np.searchsorted(self.dates, _to_date(date), "left"))))

    def index_of(self, date) -> int:
        return int(np.searchsorted(self.dates, _to_date(date), "left"))


# ---------------------------------------------------------------- CSV I/O

def _parse_date(text: str, line: int) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise ParseError(f"bad date {text!r}", line) from None


def _parse_number(text: str, line: int) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad number {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {text!r}", line)
    return value


def parse_prices(text: str) -> PricePanel:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    if not header or header[0].strip() != "date" or len(header) < 2:
        raise ParseError("header must be 'date,<TICKER>,...'", 1)
    tickers = [h.strip() for h in header[1:]]
    if any(not t for t in tickers) or len(set(tickers)) != len(tickers):
        raise ParseError("empty or duplicate ticker in header", 1)

    dates, rows = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
        d = _parse_date(row[0], line_no)
        if dates and d <= dates[-1]:
            raise ParseError(f"date {d} is not after {dates[-1]}", line_no)
        dates.append(d)
        rows.append([_parse_number(c, line_no) for c in row[1:]])
    return _clean(np.array(dates, dtype="datetime64[D]"), tickers,
                  np.array(rows, dtype=np.float64).reshape(len(rows), len(tickers)))


def _clean(dates, tickers, prices) -> PricePanel:
    """Forward-fill gaps, then drop leading rows that are still incomplete."""
    prices = prices.copy()
    repairs = 0
    for j in range(prices.shape[1]):
        col = prices[:, j]
        for t in range(1, len(col)):
            if math.isnan(col[t]) and not math.isnan(col[t - 1]):
                col[t] = col[t - 1]
                repairs += 1
    complete = ~np.isnan(prices).any(axis=1)
    first = int(np.argmax(complete)) if complete.any() else len(complete)
    dates, prices = dates[first:], prices[first:]
    if len(dates) < 2:
        raise DataError("fewer than 2 complete price rows")
    if np.any(prices <= 0):
        raise DataError("prices must be strictly positive")
    if first:
        log.info("dropped %d leading incomplete rows", first)
    return PricePanel(dates, tuple(tickers), prices, repairs)


def load_prices(path) -> PricePanel:
    """Read a ``date,<TICKER>,...`` CSV. ``panel.repairs`` counts forward-filled cells."""
    return parse_prices(Path(path).read_text(encoding="utf-8"))


def format_prices(panel: PricePanel) -> str:
    lines = [",".join(("date",) + panel.tickers)]
    for d, row in zip(panel.dates, panel.prices):
        lines.append(",".join([str(d)] + [repr(float(x)) for x in row]))
    return "\n".join(lines) + "\n"


def write_prices(panel: PricePanel, path) -> None:
    Path(path).write_text(format_prices(panel), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------- HTTP

def _chart_series(payload: dict, symbol: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        result = payload["chart"]["result"][0]
        stamps = result["timestamp"]
        closes = result["indicators"]["adjclose"][0]["adjclose"]
    except (KeyError, IndexError, TypeError):
        raise FetchError(f"{symbol}: unexpected chart payload") from None
    dates, values = [], []
    for ts, px in zip(stamps, closes):
        if px is None:
            continue
        d = np.datetime64(dt.datetime.fromtimestamp(int(ts), dt.timezone.utc).date(), "D")
        if dates and d == dates[-1]:
            values[-1] = float(px)
            continue
        dates.append(d)
        values.append(float(px))
    if not dates:
        raise FetchError(f"{symbol}: no prices in payload")
    return np.array(dates, dtype="datetime64[D]"), np.array(values)


def _epoch(d: dt.date) -> int:
    return int(dt.datetime(d.year, d.month, d.day, tzinfo=dt.timezone.utc).timestamp())


def _fetch_one(symbol: str, start: dt.date, end: dt.date, endpoint: str,
               cache_dir: Path | None, session, timeout: float):
    cache = cache_dir / f"{symbol}.csv" if cache_dir else None
    if cache is not None and cache.exists():
        p = load_prices(cache)
        return p.dates, p.prices[:, 0]
    params = {"period1": _epoch(start), "period2": _epoch(end + dt.timedelta(days=1)),
              "interval": "1d", "events": "div,splits"}
    if "{symbol}" in endpoint:
        url = endpoint.format(symbol=symbol)
    else:
        url = endpoint
        params["symbol"] = symbol
    try:
        resp = session.get(url, params=params, timeout=timeout,
                           headers={"User-Agent": "portlab/0.1"})
        resp.raise_for_status()
        payload = resp.json()
    except Exception as exc:  # noqa: BLE001 - any transport/JSON failure names the ticker
        raise FetchError(f"{symbol}: {exc}") from exc
    dates, values = _chart_series(payload, symbol)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_prices(PricePanel(dates, (symbol,), values[:, None]), cache)
    return dates, values


def fetch_prices(tickers: Sequence[str], start, end, endpoint: str = DEFAULT_ENDPOINT,
                 cache_dir=None, session=None, timeout: float = 30.0) -> PricePanel:
    """Download daily adjusted closes for ``tickers`` and align them on dates.

    Each ticker's series is cached as ``<cache_dir>/<TICKER>.csv``; a cached
    ticker is never requested again, so re-runs work offline.
    """
    tickers = list(tickers)
    if not tickers:
        raise ValueError("ticker list is empty")
    start, end = dt.date.fromisoformat(str(start)), dt.date.fromisoformat(str(end))
    if end < start:
        raise ValueError("end date precedes start date")
    if session is None:
        import requests
        session = requests.Session()
    cache_dir = Path(cache_dir) if cache_dir else None

    series, failures = {}, {}
    for sym in tickers:
        try:
            series[sym] = _fetch_one(sym, start, end, endpoint, cache_dir, session, timeout)
        except FetchError as exc:
            failures[sym] = str(exc)
    if failures:
        if len(failures) == 1:
            raise FetchError(next(iter(failures.values())))
        raise FetchError("missing tickers: " + ", ".join(sorted(failures)))

    lo, hi = np.datetime64(start, "D"), np.datetime64(end, "D")
    all_dates = np.unique(np.concatenate([d for d, _ in series.values()]))
    all_dates = all_dates[(all_dates >= lo) & (all_dates <= hi)]
    grid = np.full((len(all_dates), len(tickers)), np.nan)
    for j, sym in enumerate(tickers):
        d, v = series[sym]
        keep = (d >= lo) & (d <= hi)
        grid[np.searchsorted(all_dates, d[keep]), j] = v[keep]
    return _clean(all_dates, tickers, grid)


# ---------------------------------------------------------------- returns & features

def compute_returns(panel: PricePanel) -> ReturnPanel:
    if len(panel) < 2:
        raise DataError("need at least 2 price rows")
    if np.any(panel.prices <= 0):
        raise DataError("prices must be strictly positive")
    r = panel.prices[1:] / panel.prices[:-1] - 1.0
    return ReturnPanel(panel.dates[1:], panel.tickers, r)


def cumulate(returns: ReturnPanel, start_prices) -> PricePanel:
    """Inverse of :func:`compute_returns` given the first row of prices."""
    start = np.asarray(start_prices, dtype=np.float64).reshape(1, -1)
    path = np.vstack([start, start * np.cumprod(1.0 + returns.returns, axis=0)])
    first = returns.dates[0] - np.timedelta64(1, "D") if len(returns) else np.datetime64("1970-01-01")
    return PricePanel(np.concatenate([[first], returns.dates]), returns.tickers, path)


@dataclass(frozen=True)
class FeatureWindows:
    volatility: int = 21
    moving_average: int = 21
    momentum: int = 63


@dataclass(frozen=True)
class FeaturePanel:
    """Per-asset rolling features; rows before a full window are NaN."""

    dates: np.ndarray
    tickers: tuple
    windows: FeatureWindows
    volatility: np.ndarray
    moving_average: np.ndarray
    momentum: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return ~(np.isnan(self.volatility).any(1) | np.isnan(self.moving_average).any(1)
                 | np.isnan(self.momentum).any(1))

    def matrix(self) -> tuple[list[str], np.ndarray]:
        w = self.windows
        names = ([f"{t}:vol{w.volatility}" for t in self.tickers]
                 + [f"{t}:ma{w.moving_average}" for t in self.tickers]
                 + [f"{t}:mom{w.momentum}" for t in self.tickers])
        return names, np.hstack([self.volatility, self.moving_average, self.momentum])


def _rolling(x: np.ndarray, window: int, fn) -> np.ndarray:
    out = np.full(x.shape, np.nan)
    if window <= len(x):
        view = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
        out[window - 1:] = fn(view)
    return out


def rolling_volatility(r: np.ndarray, window: int) -> np.ndarray:
    return _rolling(r, window, lambda v: v.std(axis=-1, ddof=1))


def rolling_mean(r: np.ndarray, window: int) -> np.ndarray:
    return _rolling(r, window, lambda v: v.mean(axis=-1))


def rolling_momentum(r: np.ndarray, window: int) -> np.ndarray:
    return _rolling(r, window, lambda v: np.prod(1.0 + v, axis=-1) - 1.0)


def compute_features(returns: ReturnPanel, windows: FeatureWindows = FeatureWindows()) -> FeaturePanel:
    """Trailing volatility, moving average and momentum; row t uses rows <= t only."""
    for w in (windows.volatility, windows.moving_average, windows.momentum):
        if w < 2:
            raise ValueError("feature windows must be at least 2 days")
        if w > len(returns):
            raise ValueError(f"window {w} longer than the {len(returns)}-day series")
    r = returns.returns
    return FeaturePanel(returns.dates, returns.tickers, windows,
                        rolling_volatility(r, windows.volatility),
                        rolling_mean(r, windows.moving_average),
                        rolling_momentum(r, windows.momentum))


@dataclass(frozen=True)
class ScalerParams:
    names: tuple
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray
    dropped: tuple = field(default=())


def fit_standardizer(values: np.ndarray, names: Sequence[str] | None = None) -> ScalerParams:
    """Fit per-column mean and sample std on the training rows given.

    NaN rows (incomplete windows) are ignored. Constant columns are dropped
    and listed in ``dropped``.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training range is empty")
    names = tuple(names) if names is not None else tuple(str(i) for i in range(x.shape[1]))
    mu = np.nanmean(x, axis=0)
    sd = np.nanstd(x, axis=0, ddof=1)
    kept = np.isfinite(sd) & (sd > 0)
    dropped = tuple(n for n, k in zip(names, kept) if not k)
    for name in dropped:
        log.warning("dropping zero-variance feature %s", name)
    return ScalerParams(names, mu, sd, kept, dropped)


def apply_standardizer(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.shape[-1] != len(params.names):
        raise ValueError("column count does not match fitted scaler")
    k = params.kept
    return (x[..., k] - params.mean[k]) / params.std[k]


def split(panel, boundary):
    """Split any dated panel into rows before ``boundary`` and rows on/after it."""
    b = _to_date(boundary)
    if not (panel.dates[0] < b <= panel.dates[-1]):
        raise ValueError(f"boundary {b} is not strictly inside {panel.dates[0]}..{panel.dates[-1]}")
    i = int(np.searchsorted(panel.dates, b, "left"))
    return panel.rows(slice(0, i)), panel.rows(slice(i, None))


def payload_for(dates, closes) -> dict:
    """Build a chart payload of the shape the fetcher consumes (used by tests and tooling)."""
    stamps = [_epoch(dt.date.fromisoformat(str(d))) + 14 * 3600 for d in dates]
    return {"chart": {"result": [{"timestamp": stamps,
                                  "indicators": {"adjclose": [{"adjclose": list(closes)}]}}],
                      "error": None}}


def dumps_payload(dates, closes) -> str:
    return json.dumps(payload_for(dates, closes))
