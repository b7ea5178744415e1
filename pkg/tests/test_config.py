import pytest

from portlab.config import (RunConfig, build_config, format_config, load_config,
                            parse_config_text)
from portlab.errors import ConfigError
from portlab.numerics import derive_seed


def test_defaults():
    cfg = load_config()
    assert cfg == build_config({})
    assert cfg.mvo.cap == 0.6 and cfg.backtest.interval == 21 and cfg.backtest.cost_rate == 0.001
    assert cfg.data.tickers == ("AAPL", "TLT", "AMZN", "SPY", "EFA", "GLD", "MSFT")


def test_file_with_comments_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# run settings\nseed = 7\nmvo.cap = 0.5  # tighter\n\nbacktest.test_end = 2022-06-30\n"
                    "data.tickers = SPY, TLT\n")
    cfg = load_config(path, {"mvo.cap": "0.4"})
    assert cfg.seed == 7 and cfg.mvo.cap == 0.4
    assert cfg.backtest.test_end == "2022-06-30"
    assert cfg.data.tickers == ("SPY", "TLT")


@pytest.mark.parametrize("text", ["mvo.caps = 0.5", "foo = 1", "tf = 3", "drl.gamma.x = 1"])
def test_unknown_keys_rejected(text):
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config(parse_config_text(text))


@pytest.mark.parametrize("values", [
    {"mvo.cap": "abc"}, {"mvo.cap": "1.5"}, {"mvo.mode": "min-var"},
    {"mvo.mode": "target-return"}, {"backtest.interval": "0"}, {"cov.shrink_intensity": "2"},
    {"tf.d_model": "30"}, {"data.start": "2015-13-01"}, {"data.tickers": ""},
    {"ae.lr": "0"}, {"seed": "-1"}, {"tf.positional": "maybe"},
])
def test_invalid_values_rejected(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_malformed_lines():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\njust words\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")


def test_optional_values():
    cfg = build_config({"mvo.mode": "target-return", "mvo.target": "0.0004",
                        "backtest.max_drawdown": "0.2", "backtest.test_end": "none"})
    assert cfg.mvo.target == 0.0004 and cfg.backtest.max_drawdown == 0.2
    assert cfg.backtest.test_end is None


def test_seed_fan_out():
    cfg = build_config({"seed": "42"})
    seeds = {m: cfg.model_seed(m) for m in ("ae", "gnn", "tf", "drl", "ae_drl")}
    assert seeds == {m: derive_seed(42, m) for m in seeds}
    assert len(set(seeds.values())) == 5
    assert cfg.ae_config().seed == derive_seed(42, "ae")
    assert cfg.drl_config(hybrid=True).seed == derive_seed(42, "ae_drl")


def test_explicit_model_seed_wins():
    cfg = build_config({"seed": "42", "gnn.seed": "5", "drl.seed": "9"})
    assert cfg.gnn_config().seed == 5
    assert cfg.drl_config().seed == 9
    assert cfg.drl_config(hybrid=True).seed == derive_seed(9, "ae_drl")
    assert cfg.tf_config().seed == derive_seed(42, "tf")


def test_drl_cap_follows_mvo_cap():
    assert build_config({"mvo.cap": "0.3"}).drl_config().cap == 0.3
    assert build_config({"mvo.cap": "0.3", "drl.cap": "1.0"}).drl_config().cap == 1.0


def test_derived_configs():
    cfg = build_config({"cov.shrink_intensity": "0", "mvo.rf_annual": "0.02",
                        "backtest.equities": "SPY,EFA"})
    s = cfg.strategy_config()
    assert s.shrink_intensity == 0.0 and s.rf_annual == 0.02 and s.equities == ("SPY", "EFA")
    b = cfg.backtest_config()
    assert b.cap == 0.6 and b.rf_annual == 0.02 and b.interval == 21


def test_format_round_trip():
    cfg = build_config({"seed": "3", "mvo.cap": "0.45", "backtest.max_volatility": "0.3"})
    again = build_config(parse_config_text(format_config(cfg)))
    assert again.as_dict() == cfg.as_dict()
    assert isinstance(RunConfig().as_dict()["drl.gamma"], float)
