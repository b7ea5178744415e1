"""Generate the bundled synthetic price panel and its reference metrics.

Prices follow a two-factor model (equity and rates) with asset-specific
noise over 2015-2023 business days. The reference metrics for the equal
weight and 60/40 backtests are computed here in plain Python (csv module,
float loops), independently of the package's numpy backtester.

    python3 scripts/make_fixture.py
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "src" / "portlab" / "fixtures"
TICKERS = ("AAPL", "TLT", "AMZN", "SPY", "EFA", "GLD", "MSFT")
SEED = 20240601

# annual drift, equity beta, rates beta, idiosyncratic annual vol
LOADINGS = {
    "AAPL": (0.20, 1.2, -0.1, 0.22),
    "TLT": (0.02, -0.2, 1.0, 0.04),
    "AMZN": (0.18, 1.3, -0.1, 0.25),
    "SPY": (0.10, 1.0, 0.0, 0.02),
    "EFA": (0.06, 0.9, 0.0, 0.06),
    "GLD": (0.05, 0.1, 0.4, 0.13),
    "MSFT": (0.19, 1.1, -0.1, 0.18),
}
START_PRICES = (27.0, 100.0, 15.0, 180.0, 55.0, 110.0, 40.0)

BACKTEST = {"interval": 21, "cost_rate": 0.001, "initial": 1.0, "rf_annual": 0.0,
            "test_start": "2021-01-01"}


def business_days(start: dt.date, end: dt.date) -> list[dt.date]:
    out, d = [], start
    while d <= end:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def generate() -> str:
    days = business_days(dt.date(2015, 1, 2), dt.date(2023, 12, 29))
    rng = np.random.Generator(np.random.Philox(SEED))
    n = len(days) - 1
    equity = rng.standard_normal(n) * 0.16 / math.sqrt(252)
    rates = rng.standard_normal(n) * 0.08 / math.sqrt(252)
    rows = [list(START_PRICES)]
    rets = np.empty((n, len(TICKERS)))
    for j, t in enumerate(TICKERS):
        drift, b_eq, b_rt, idio = LOADINGS[t]
        noise = rng.standard_normal(n) * idio / math.sqrt(252)
        rets[:, j] = drift / 252 + b_eq * equity + b_rt * rates + noise
    prices = np.asarray(START_PRICES) * np.vstack([np.ones(len(TICKERS)),
                                                    np.cumprod(1.0 + rets, axis=0)])
    lines = ["date," + ",".join(TICKERS)]
    for d, row in zip(days, prices):
        lines.append(d.isoformat() + "," + ",".join(f"{p:.4f}" for p in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- plain-Python oracle

def read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    dates = [r[0] for r in rows[1:]]
    prices = [[float(x) for x in r[1:]] for r in rows[1:]]
    return header, dates, prices


def oracle_backtest(header, dates, prices, target: list[float], cfg: dict) -> dict:
    rets = []
    for a, b in zip(prices[:-1], prices[1:]):
        rets.append([y / x - 1.0 for x, y in zip(a, b)])
    rdates = dates[1:]
    first = next(i for i, d in enumerate(rdates) if d >= cfg["test_start"])
    test = rets[first:]
    n = len(header)
    held = [0.0] * n
    daily, total_turn = [], 0.0
    for t, r in enumerate(test):
        cost = 0.0
        if t % cfg["interval"] == 0:
            turn = sum(abs(w - h) for w, h in zip(target, held))
            total_turn += turn
            cost = cfg["cost_rate"] * turn
            held = list(target)
        gross = sum(w * x for w, x in zip(held, r))
        daily.append(gross - cost)
        held = [w * (1.0 + x) / (1.0 + gross) for w, x in zip(held, r)]
    # metrics
    log_sum = math.fsum(math.log1p(x) for x in daily)
    cr = math.exp(log_sum) - 1.0
    ar = (1.0 + cr) ** (252 / len(daily)) - 1.0
    mean = math.fsum(daily) / len(daily)
    var = math.fsum((x - mean) ** 2 for x in daily) / (len(daily) - 1)
    av = math.sqrt(var) * math.sqrt(252)
    sr = (ar - cfg["rf_annual"]) / av if av >= 1e-12 else None
    values = [cfg["initial"]]
    for x in daily:
        values.append(values[-1] * (1.0 + x))
    mdd, peak = 0.0, values[0]
    for v in values:
        peak = max(peak, v)
        mdd = max(mdd, (peak - v) / peak)
    return {"cumulative_return": cr, "annualized_return": ar, "annualized_volatility": av,
            "sharpe_ratio": sr, "max_drawdown": mdd, "total_turnover": total_turn,
            "days": len(daily), "final_value": values[-1]}


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    csv_path = OUT / "synthetic_prices.csv"
    csv_path.write_text(generate(), encoding="utf-8")
    header, dates, prices = read_csv(csv_path)
    n = len(header)
    ew = [1.0 / n] * n
    sf = [0.0] * n
    sf[header.index("SPY")] = 0.6
    sf[header.index("TLT")] = 0.4
    ref = {"config": BACKTEST, "tickers": header,
           "equal_weight": oracle_backtest(header, dates, prices, ew, BACKTEST),
           "sixty_forty": oracle_backtest(header, dates, prices, sf, BACKTEST)}
    (OUT / "synthetic_reference.json").write_text(json.dumps(ref, indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    print(f"wrote {csv_path} ({len(dates)} rows) and reference metrics")
    return 0


if __name__ == "__main__":
    sys.exit(main())
