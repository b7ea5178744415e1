"""Comparison tables and static SVG charts for a set of backtest results."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

ROW_FIELDS = ("strategy", "cumulative_return_pct", "volatility_pct", "sharpe", "cagr_pct",
              "max_drawdown_pct")
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
WIDTH, HEIGHT = 720, 400
MARGIN = {"left": 64, "right": 150, "top": 40, "bottom": 48}


def report_row(strategy: str, metrics: dict) -> dict:
    """One table row; percentages rounded to 2 decimals, drawdown shown negative."""
    sr = metrics.get("sharpe_ratio")
    return {"strategy": strategy,
            "cumulative_return_pct": round(100.0 * metrics["cumulative_return"], 2),
            "volatility_pct": round(100.0 * metrics["annualized_volatility"], 2),
            "sharpe": None if sr is None else round(sr, 4),
            "cagr_pct": round(100.0 * metrics["annualized_return"], 2),
            "max_drawdown_pct": round(-100.0 * metrics["max_drawdown"], 2)}


@dataclass
class ComparisonReport:
    rows: list
    charts: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "charts": self.charts, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ComparisonReport":
        return cls(doc["rows"], doc.get("charts", {}), doc.get("failures", {}))


def _cell(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _sharpe_cell(value) -> str:
    return "null" if value is None else f"{value:.4f}"


def format_table(rows: list, fmt: str = "md") -> str:
    if fmt == "json":
        return json.dumps(rows, indent=1, sort_keys=True) + "\n"
    cells = [[r["strategy"], _cell(r["cumulative_return_pct"]), _cell(r["volatility_pct"]),
              _sharpe_cell(r["sharpe"]), _cell(r["cagr_pct"]), _cell(r["max_drawdown_pct"])]
             for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        w.writerows(cells)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(ROW_FIELDS) + " |", "|" + "---|" * len(ROW_FIELDS)]
        lines += ["| " + " | ".join(c) + " |" for c in cells]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


# ---------------------------------------------------------------- SVG

def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, title: str, x_label: str, y_label: str):
        self.parts = []
        self.title, self.x_label, self.y_label = title, x_label, y_label
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(self, u: float) -> float:
        return self.x0 + u * (self.x1 - self.x0)

    def sy(self, u: float) -> float:
        return self.y0 + u * (self.y1 - self.y0)

    def add(self, s: str) -> None:
        self.parts.append(s)

    def axes(self, y_lo: float, y_hi: float, x_ticks: list, y_fmt="{:.2f}") -> None:
        self.add(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>')
        self.add(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>')
        for k in range(5):
            u = k / 4
            val = y_lo + u * (y_hi - y_lo)
            y = _fmt(self.sy(u))
            self.add(f'<line x1="{self.x0 - 4}" y1="{y}" x2="{self.x0}" y2="{y}" stroke="black"/>')
            self.add(f'<text x="{self.x0 - 6}" y="{y}" font-size="10" text-anchor="end" '
                     f'dominant-baseline="middle">{escape(y_fmt.format(val))}</text>')
        for u, label in x_ticks:
            x = _fmt(self.sx(u))
            self.add(f'<line x1="{x}" y1="{self.y0}" x2="{x}" y2="{self.y0 + 4}" stroke="black"/>')
            self.add(f'<text x="{x}" y="{self.y0 + 16}" font-size="10" text-anchor="middle">'
                     f'{escape(label)}</text>')

    def legend(self, names: list) -> None:
        for i, name in enumerate(names):
            y = self.y1 + 14 * i
            color = PALETTE[i % len(PALETTE)]
            self.add(f'<rect x="{self.x1 + 12}" y="{y}" width="10" height="10" fill="{color}"/>')
            self.add(f'<text x="{self.x1 + 26}" y="{y + 9}" font-size="11">{escape(name)}</text>')

    def render(self) -> str:
        head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}">',
                f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
                f'<text x="{WIDTH / 2}" y="22" font-size="14" text-anchor="middle">{escape(self.title)}</text>',
                f'<text x="{(self.x0 + self.x1) / 2}" y="{HEIGHT - 10}" font-size="11" '
                f'text-anchor="middle">{escape(self.x_label)}</text>',
                f'<text x="14" y="{(self.y0 + self.y1) / 2}" font-size="11" text-anchor="middle" '
                f'transform="rotate(-90 14 {(self.y0 + self.y1) / 2})">{escape(self.y_label)}</text>']
        return "\n".join(head + self.parts + ["</svg>"]) + "\n"


def _date_ticks(dates, count: int = 5) -> list:
    n = len(dates)
    if n < 2:
        return [(0.0, str(dates[0]))] if n else []
    idx = np.unique(np.linspace(0, n - 1, count).round().astype(int))
    return [(i / (n - 1), str(dates[i])) for i in idx]


def stacked_area_svg(dates, tickers, weights, title: str) -> str:
    """Weight allocation over time as stacked areas (rows of ``weights`` sum to 1)."""
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    n = len(dates)
    c = _Canvas(title, "Date", "Weight")
    c.axes(0.0, 1.0, _date_ticks(dates))
    xs = [c.sx(i / max(n - 1, 1)) for i in range(n)]
    lower = np.zeros(n)
    for j, t in enumerate(tickers):
        upper = lower + w[:, j]
        top = " ".join(f"{_fmt(x)},{_fmt(c.sy(u))}" for x, u in zip(xs, upper))
        bottom = " ".join(f"{_fmt(x)},{_fmt(c.sy(u))}" for x, u in zip(xs[::-1], lower[::-1]))
        c.add(f'<polygon points="{top} {bottom}" fill="{PALETTE[j % len(PALETTE)]}" '
              f'fill-opacity="0.85" stroke="none"><title>{escape(t)}</title></polygon>')
        lower = upper
    c.legend(list(tickers))
    return c.render()


def line_chart_svg(dates, series: dict, title: str, y_label: str) -> str:
    """One polyline per named series over a shared date axis."""
    values = [np.asarray(v, dtype=np.float64) for v in series.values()]
    lo = min(float(v.min()) for v in values)
    hi = max(float(v.max()) for v in values)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = len(dates)
    c = _Canvas(title, "Date", y_label)
    c.axes(lo, hi, _date_ticks(dates))
    for j, (name, v) in enumerate(series.items()):
        pts = " ".join(f"{_fmt(c.sx(i / max(n - 1, 1)))},{_fmt(c.sy((x - lo) / (hi - lo)))}"
                       for i, x in enumerate(v))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[j % len(PALETTE)]}" '
              f'stroke-width="1.5"><title>{escape(name)}</title></polyline>')
    c.legend(list(series))
    return c.render()


def bar_chart_svg(values: dict, title: str, y_label: str) -> str:
    """Vertical bars; ``None`` values are drawn as empty slots labelled n/a."""
    finite = [v for v in values.values() if v is not None]
    lo = min([0.0] + finite)
    hi = max([0.0] + finite)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    names = list(values)
    k = len(names)
    c = _Canvas(title, "Strategy", y_label)
    c.axes(lo, hi, [((i + 0.5) / k, name) for i, name in enumerate(names)])
    zero = c.sy((0.0 - lo) / (hi - lo))
    width = 0.6 * (c.x1 - c.x0) / max(k, 1)
    for i, name in enumerate(names):
        x = c.sx((i + 0.5) / k) - width / 2
        v = values[name]
        if v is None:
            c.add(f'<text x="{_fmt(x + width / 2)}" y="{_fmt(zero - 4)}" font-size="10" '
                  f'text-anchor="middle">n/a</text>')
            continue
        y = c.sy((v - lo) / (hi - lo))
        top, h = min(y, zero), abs(zero - y)
        c.add(f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(width)}" height="{_fmt(h)}" '
              f'fill="{PALETTE[i % len(PALETTE)]}"><title>{escape(name)}: {v:.4f}</title></rect>')
    return c.render()


# ---------------------------------------------------------------- report directory

def render_report(directory, strategies: list[str], failures: dict | None = None) -> ComparisonReport:
    """Build tables and charts from the stored per-strategy files in ``directory``.

    Reads ``<s>.json``, ``<s>_values.csv`` and ``<s>_weights.csv`` only, so
    rerendering never recomputes a backtest and produces identical bytes.
    """
    from .backtest import read_values_csv, read_weights_csv

    d = Path(directory)
    rows, cumulative, sharpe, charts = [], {}, {}, {}
    dates = None
    for s in strategies:
        doc = json.loads((d / f"{s}.json").read_text(encoding="utf-8"))
        rows.append(report_row(s, doc["metrics"]))
        dates, values, _ = read_values_csv(d / f"{s}_values.csv")
        cumulative[s] = values / doc["config"]["initial"] - 1.0
        sharpe[s] = doc["metrics"]["sharpe_ratio"]
        wdates, tickers, weights = read_weights_csv(d / f"{s}_weights.csv")
        name = f"weights_{s}.svg"
        (d / name).write_text(stacked_area_svg(wdates, tickers, weights,
                                               f"Portfolio Weight Allocation Over Time: {s}"),
                              encoding="utf-8")
        charts[f"weights_{s}"] = name
    if cumulative:
        (d / "cumulative_returns.svg").write_text(
            line_chart_svg(dates, cumulative, "Cumulative Returns by Strategy", "Cumulative return"),
            encoding="utf-8")
        (d / "sharpe_ratios.svg").write_text(
            bar_chart_svg(sharpe, "Sharpe Ratio Comparison", "Sharpe ratio"), encoding="utf-8")
        charts["cumulative_returns"] = "cumulative_returns.svg"
        charts["sharpe_ratios"] = "sharpe_ratios.svg"
    report = ComparisonReport(rows, charts, dict(failures or {}))
    (d / "report.json").write_text(report.to_json(), encoding="utf-8")
    for fmt, ext in (("md", "md"), ("csv", "csv")):
        (d / f"report.{ext}").write_text(format_table(rows, fmt), encoding="utf-8")
    return report


def load_report(directory) -> ComparisonReport:
    path = Path(directory) / "report.json"
    return ComparisonReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
