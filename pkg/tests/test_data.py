import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portlab import fixture_path
from portlab.data import (DEFAULT_TICKERS, FeatureWindows, PricePanel, apply_standardizer,
                          compute_features, compute_returns, cumulate, dumps_payload, fetch_prices,
                          fit_standardizer, format_prices, load_prices, parse_prices, split)
from portlab.errors import DataError, FetchError, ParseError
from portlab.numerics import rng_stream

from conftest import make_panel


# ---------------------------------------------------------------- CSV

def test_load_small_csv(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,A,B\n2020-01-01,1,2\n2020-01-02,1.5,2.5\n2020-01-03,2,3\n")
    panel = load_prices(p)
    assert panel.prices.shape == (3, 2)
    assert panel.tickers == ("A", "B")
    assert panel.repairs == 0


def test_forward_fill_counts_repair():
    panel = parse_prices("date,A,B\n2020-01-01,1,2\n2020-01-02,,2.5\n2020-01-03,2,3\n")
    assert panel.prices[1, 0] == 1.0
    assert panel.repairs == 1


def test_leading_incomplete_rows_dropped():
    panel = parse_prices("date,A,B\n2020-01-01,,2\n2020-01-02,1,2.5\n2020-01-03,2,3\n")
    assert len(panel) == 2
    assert str(panel.dates[0]) == "2020-01-02"


@pytest.mark.parametrize("text,line", [
    ("day,A\n2020-01-01,1\n2020-01-02,2\n", 1),
    ("date,A\n2020-01-02,1\n2020-01-01,2\n", 3),
    ("date,A\n2020-01-01,1\n2020-13-02,2\n", 3),
    ("date,A\n2020-01-01,1\n2020-01-02,abc\n", 3),
    ("date,A\n2020-01-01,1\n2020-01-02,2,3\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_prices(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_too_few_rows():
    with pytest.raises(DataError):
        parse_prices("date,A\n2020-01-01,1\n")


def test_nonpositive_price():
    with pytest.raises(DataError):
        parse_prices("date,A\n2020-01-01,1\n2020-01-02,0\n")


def test_round_trip_canonical(tmp_path, fixture_prices):
    text = format_prices(fixture_prices)
    again = format_prices(parse_prices(text))
    assert again == text
    p = tmp_path / "x.csv"
    p.write_text(text)
    assert format_prices(load_prices(p)) == text


def test_fixture_shape(fixture_prices):
    assert fixture_prices.tickers == DEFAULT_TICKERS
    assert str(fixture_prices.dates[0]).startswith("2015")
    assert str(fixture_prices.dates[-1]).startswith("2023")
    assert np.all(fixture_prices.prices > 0)


# ---------------------------------------------------------------- returns

def test_simple_returns():
    panel = PricePanel(np.array(["2020-01-01", "2020-01-02", "2020-01-03"], dtype="datetime64[D]"),
                       ("A",), np.array([[100.0], [110.0], [99.0]]))
    r = compute_returns(panel)
    assert np.allclose(r.returns[:, 0], [0.10, -0.10], atol=1e-15)
    assert len(r.dates) == 2 and r.dates[0] == panel.dates[1]


def test_constant_prices_zero_returns():
    panel = PricePanel(np.arange(np.datetime64("2020-01-01"), np.datetime64("2020-01-06")),
                       ("A", "B"), np.full((5, 2), 7.0))
    assert np.array_equal(compute_returns(panel).returns, np.zeros((4, 2)))


def test_fixture_returns_match_loop_oracle(fixture_prices, fixture_returns):
    p = fixture_prices.prices.tolist()
    oracle = [[p[t + 1][j] / p[t][j] - 1.0 for j in range(len(p[0]))] for t in range(len(p) - 1)]
    assert np.array_equal(fixture_returns.returns, np.array(oracle))


@settings(max_examples=50)
@given(st.integers(2, 60), st.integers(1, 5), st.integers(0, 10_000))
def test_cumulate_inverts_returns(t, n, seed):
    rng = rng_stream(seed)
    prices = np.exp(np.cumsum(rng.normal(0, 0.02, (t, n)), axis=0)) * rng.uniform(1, 100, n)
    panel = PricePanel(np.datetime64("2020-01-01") + np.arange(t), tuple("ABCDE"[:n]), prices)
    back = compute_returns(cumulate(compute_returns(panel), prices[0]))
    assert np.allclose(back.returns, compute_returns(panel).returns, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- features

def test_constant_return_features():
    r = make_panel(np.full((10, 1), 0.01))
    f = compute_features(r, FeatureWindows(3, 3, 4))
    assert np.allclose(f.volatility[2:], 0.0, atol=1e-15)
    assert np.allclose(f.moving_average[2:], 0.01)
    assert np.allclose(f.momentum[3:], 1.01 ** 4 - 1)
    assert not f.valid[:3].any() and f.valid[3:].all()


def test_window_two_volatility():
    r = make_panel(np.array([[0.1], [-0.1]]))
    f = compute_features(r, FeatureWindows(2, 2, 2))
    assert f.volatility[1, 0] == pytest.approx(np.std([0.1, -0.1], ddof=1), abs=1e-15)
    assert np.isnan(f.volatility[0, 0])


def test_features_shift_with_input():
    rng = rng_stream(1)
    x = rng.normal(0, 0.01, (40, 2))
    w = FeatureWindows(5, 5, 7)
    a = compute_features(make_panel(x), w)
    b = compute_features(make_panel(np.vstack([rng.normal(0, 0.01, (1, 2)), x])), w)
    assert np.allclose(a.volatility[10:], b.volatility[11:], atol=1e-15)
    assert np.allclose(a.momentum[10:], b.momentum[11:], atol=1e-15)


def test_features_no_leakage():
    rng = rng_stream(2)
    x = rng.normal(0, 0.01, (60, 3))
    full = compute_features(make_panel(x), FeatureWindows(5, 5, 10))
    cut = compute_features(make_panel(x[:40]), FeatureWindows(5, 5, 10))
    _, a = full.matrix()
    _, b = cut.matrix()
    assert np.array_equal(a[:40], b, equal_nan=True)


def test_feature_window_errors():
    r = make_panel(np.zeros((5, 1)))
    with pytest.raises(ValueError):
        compute_features(r, FeatureWindows(1, 2, 2))
    with pytest.raises(ValueError):
        compute_features(r, FeatureWindows(2, 2, 6))


# ---------------------------------------------------------------- standardizer / split

def test_standardizer_example():
    s = fit_standardizer(np.array([[1.0], [2.0], [3.0]]))
    assert s.mean[0] == 2.0 and s.std[0] == 1.0
    assert np.array_equal(apply_standardizer(np.array([[1.0], [2.0], [3.0]]), s)[:, 0], [-1, 0, 1])


def test_standardizer_train_moments():
    x = rng_stream(5).normal(3, 2, (200, 4))
    z = apply_standardizer(x, fit_standardizer(x))
    assert np.allclose(z.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(z.std(axis=0, ddof=1), 1, atol=1e-9)


def test_standardizer_drops_constant():
    x = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
    s = fit_standardizer(x, ["a", "b"])
    assert s.dropped == ("b",)
    assert apply_standardizer(x, s).shape == (5, 1)


def test_standardizer_uses_training_params_only():
    train = np.array([[0.0], [2.0]])
    s = fit_standardizer(train)
    assert apply_standardizer(np.array([[10.0]]), s)[0, 0] == pytest.approx((10 - 1) / np.sqrt(2))


def test_split_default_boundary(fixture_returns):
    train, test = split(fixture_returns, "2021-01-01")
    assert str(train.dates[-1]) < "2021-01-01" <= str(test.dates[0])
    assert str(train.dates[0]).startswith("2015") and str(test.dates[-1]).startswith("2023")
    assert len(train) + len(test) == len(fixture_returns)
    # business-day counts of the synthetic calendar
    assert len(test) == int(np.sum(fixture_returns.dates >= np.datetime64("2021-01-01")))
    joined = np.vstack([train.returns, test.returns])
    assert np.array_equal(joined, fixture_returns.returns)


def test_split_boundary_errors(fixture_returns):
    with pytest.raises(ValueError):
        split(fixture_returns, fixture_returns.dates[0])
    with pytest.raises(ValueError):
        split(fixture_returns, "2030-01-01")


# ---------------------------------------------------------------- HTTP fetcher

class _ChartHandler(BaseHTTPRequestHandler):
    series = {}
    hits = []

    def do_GET(self):
        url = urlparse(self.path)
        symbol = url.path.rsplit("/", 1)[-1]
        q = parse_qs(url.query)
        type(self).hits.append(symbol)
        if symbol not in self.series or "period1" not in q or "period2" not in q:
            self.send_response(404)
            self.end_headers()
            self.wfile.write(b'{"chart": {"result": null, "error": "not found"}}')
            return
        dates, closes = self.series[symbol]
        body = dumps_payload(dates, closes).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def chart_server():
    _ChartHandler.series = {
        "AAA": (["2020-01-02", "2020-01-03", "2020-01-06"], [10.0, 10.5, 11.0]),
        "BBB": (["2020-01-02", "2020-01-06"], [20.0, 19.0]),
    }
    _ChartHandler.hits = []
    server = HTTPServer(("127.0.0.1", 0), _ChartHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/chart/{{symbol}}"
    server.shutdown()


def test_fetch_aligns_and_caches(chart_server, tmp_path):
    panel = fetch_prices(["AAA", "BBB"], "2020-01-01", "2020-01-31", chart_server, tmp_path)
    assert panel.tickers == ("AAA", "BBB")
    assert [str(d) for d in panel.dates] == ["2020-01-02", "2020-01-03", "2020-01-06"]
    assert panel.prices[1, 1] == 20.0 and panel.repairs == 1
    assert (tmp_path / "AAA.csv").exists()
    hits = len(_ChartHandler.hits)
    again = fetch_prices(["AAA", "BBB"], "2020-01-01", "2020-01-31", chart_server, tmp_path)
    assert len(_ChartHandler.hits) == hits
    assert format_prices(again) == format_prices(panel)


def test_fetch_unknown_ticker(chart_server):
    with pytest.raises(FetchError, match="ZZZ"):
        fetch_prices(["AAA", "ZZZ"], "2020-01-01", "2020-01-31", chart_server)


def test_fetch_lists_missing_tickers(chart_server):
    with pytest.raises(FetchError, match="missing tickers: XXX, ZZZ"):
        fetch_prices(["XXX", "AAA", "ZZZ"], "2020-01-01", "2020-01-31", chart_server)


def test_fetch_empty_list():
    with pytest.raises(ValueError):
        fetch_prices([], "2020-01-01", "2020-01-31")


def test_fetch_sends_epoch_range(chart_server):
    fetch_prices(["AAA"], "2020-01-01", "2020-01-31", chart_server)
    assert _ChartHandler.hits == ["AAA"]


def test_fetch_default_universe_shape(tmp_path):
    """Seven-ticker universe through a fake session (no network)."""
    dates = ["2015-01-02", "2015-01-05", "2015-01-06"]

    class Resp:
        def __init__(self, sym):
            self.sym = sym

        def raise_for_status(self):
            pass

        def json(self):
            return json.loads(dumps_payload(dates, [1.0 + i for i in range(3)]))

    class Session:
        def get(self, url, params=None, timeout=None, headers=None):
            return Resp(url)

    panel = fetch_prices(DEFAULT_TICKERS, "2015-01-01", "2023-12-31", session=Session())
    assert panel.prices.shape == (3, 7)


def test_fixture_loads_through_package_resource():
    assert load_prices(fixture_path()).prices.shape[1] == 7
