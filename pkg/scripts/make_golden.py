"""Freeze the package's own fixture backtest metrics as an exact regression record.

The independent reference in ``synthetic_reference.json`` agrees with these
to rounding; this file pins the bits so any change in summation order or
schedule logic shows up as a failure.

    python3 scripts/make_golden.py
"""
import json
from pathlib import Path

from portlab import fixture_path
from portlab.backtest import BacktestConfig, run_backtest
from portlab.data import load_prices

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden" / "fixture_metrics.json"


def main():
    prices = load_prices(fixture_path())
    doc = {}
    for kind in ("equal_weight", "sixty_forty"):
        res = run_backtest(kind, prices, BacktestConfig())
        doc[kind] = {**res.metrics, "days": len(res.returns), "final_value": float(res.values[-1]),
                     "rebalance_dates": res.rebalance_dates}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
