"""Flat ``key = value`` run configuration.

Every key is ``<group>.<name>`` with groups data, cov, mvo, ae, gnn, tf, drl
and backtest, plus the top-level ``seed`` and ``out``. Lines starting with
``#`` are comments. Unknown keys and unparsable values are rejected before
any work starts.

Model seeds left unset are derived from the global seed as
``derive_seed(seed, "<model>")`` (sha256 of ``"<seed>:<model>"``), so one
number reproduces a whole run.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backtest import BacktestConfig
from .data import DEFAULT_ENDPOINT, DEFAULT_TICKERS
from .errors import ConfigError
from .models.autoencoder import AEConfig
from .models.drl import DRLConfig
from .models.gnn import GNNConfig
from .models.transformer import TransformerConfig
from .numerics import derive_seed
from .strategies import StrategyConfig

MODEL_NAMES = ("ae", "gnn", "tf", "drl", "ae_drl")


@dataclass(frozen=True)
class DataSettings:
    tickers: tuple = DEFAULT_TICKERS
    start: str = "2015-01-01"
    end: str = "2023-12-31"
    endpoint: str = DEFAULT_ENDPOINT
    cache_dir: str = ""
    timeout: float = 30.0


@dataclass(frozen=True)
class CovSettings:
    shrink_intensity: str = "auto"
    window: int = 252


@dataclass(frozen=True)
class MVOSettings:
    mode: str = "max-sharpe"
    target: float | None = None
    cap: float = 0.6
    rf_annual: float = 0.0


@dataclass(frozen=True)
class BacktestSettings:
    interval: int = 21
    cost_rate: float = 0.001
    initial: float = 1.0
    test_start: str = "2021-01-01"
    test_end: str | None = None
    max_volatility: float | None = None
    max_drawdown: float | None = None
    equities: tuple = ("SPY",)
    bonds: tuple = ("TLT",)


GROUPS = {"data": DataSettings, "cov": CovSettings, "mvo": MVOSettings, "ae": AEConfig,
          "gnn": GNNConfig, "tf": TransformerConfig, "drl": DRLConfig, "backtest": BacktestSettings}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    data: DataSettings = DataSettings()
    cov: CovSettings = CovSettings()
    mvo: MVOSettings = MVOSettings()
    ae: AEConfig = AEConfig()
    gnn: GNNConfig = GNNConfig()
    tf: TransformerConfig = TransformerConfig()
    drl: DRLConfig = DRLConfig()
    backtest: BacktestSettings = BacktestSettings()
    explicit: frozenset = field(default_factory=frozenset)

    # ------------------------------------------------------------ derived settings

    def model_seed(self, model: str) -> int:
        group = "drl" if model == "ae_drl" else model
        if f"{group}.seed" in self.explicit:
            seed = getattr(self, group).seed
            return seed if model != "ae_drl" else derive_seed(seed, "ae_drl")
        return derive_seed(self.seed, model)

    def ae_config(self) -> AEConfig:
        return dataclasses.replace(self.ae, seed=self.model_seed("ae"))

    def gnn_config(self) -> GNNConfig:
        return dataclasses.replace(self.gnn, seed=self.model_seed("gnn"))

    def tf_config(self) -> TransformerConfig:
        return dataclasses.replace(self.tf, seed=self.model_seed("tf"))

    def drl_config(self, hybrid: bool = False) -> DRLConfig:
        cap = self.drl.cap if "drl.cap" in self.explicit else self.mvo.cap
        return dataclasses.replace(self.drl, cap=cap,
                                   seed=self.model_seed("ae_drl" if hybrid else "drl"))

    def strategy_config(self) -> StrategyConfig:
        si = self.cov.shrink_intensity
        return StrategyConfig(window=self.cov.window,
                              shrink_intensity=si if si == "auto" else float(si),
                              mode=self.mvo.mode, target=self.mvo.target, cap=self.mvo.cap,
                              rf_annual=self.mvo.rf_annual, equities=self.backtest.equities,
                              bonds=self.backtest.bonds)

    def backtest_config(self) -> BacktestConfig:
        b = self.backtest
        return BacktestConfig(b.interval, b.cost_rate, self.mvo.cap, self.mvo.rf_annual, b.initial,
                              b.test_start, b.test_end, b.max_volatility, b.max_drawdown)

    def as_dict(self) -> dict:
        out = {"seed": self.seed, "out": self.out}
        for g in GROUPS:
            for f in fields(getattr(self, g)):
                out[f"{g}.{f.name}"] = getattr(getattr(self, g), f.name)
        return out


# ---------------------------------------------------------------- parsing

def _parse_value(key: str, text: str, default, type_hint: str = ""):
    text = text.strip()
    if default is None and "str" in str(type_hint):
        return None if text.lower() in ("none", "null", "") else text
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(s.strip() for s in text.split(",") if s.strip())
        if text.lower() in ("none", "null", ""):
            if default is None:
                return None
            if isinstance(default, str):
                return ""
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg.seed >= 0, "seed must be non-negative"),
        (cfg.mvo.mode in ("max-sharpe", "target-return"), "mvo.mode must be max-sharpe or target-return"),
        (cfg.mvo.mode != "target-return" or cfg.mvo.target is not None, "mvo.target required in target-return mode"),
        (0 < cfg.mvo.cap <= 1, "mvo.cap must lie in (0, 1]"),
        (cfg.cov.shrink_intensity == "auto" or _in_unit(cfg.cov.shrink_intensity),
         "cov.shrink_intensity must be auto or a number in [0, 1]"),
        (cfg.cov.window >= 2, "cov.window must be >= 2"),
        (cfg.backtest.interval >= 1, "backtest.interval must be >= 1"),
        (cfg.backtest.cost_rate >= 0, "backtest.cost_rate must be >= 0"),
        (cfg.backtest.initial > 0, "backtest.initial must be positive"),
        (0 <= cfg.drl.gamma <= 1, "drl.gamma must lie in [0, 1]"),
        (cfg.drl.window >= 1 and cfg.drl.episode_length >= 1, "drl window/episode must be >= 1"),
        (cfg.tf.d_model % cfg.tf.heads == 0, "tf.d_model must be divisible by tf.heads"),
        (cfg.tf.d_model % 2 == 0, "tf.d_model must be even"),
        (cfg.ae.latent_dim >= 1 and cfg.gnn.embed_dim >= 1, "latent sizes must be >= 1"),
        (all(getattr(cfg, g).lr > 0 for g in ("ae", "gnn", "tf", "drl")), "learning rates must be positive"),
        (len(cfg.data.tickers) > 0, "data.tickers must not be empty"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for key in ("data.start", "data.end", "backtest.test_start"):
        group, name = key.split(".")
        _check_date(key, getattr(getattr(cfg, group), name))
    if cfg.backtest.test_end is not None:
        _check_date("backtest.test_end", cfg.backtest.test_end)


def _in_unit(text) -> bool:
    try:
        return 0.0 <= float(text) <= 1.0
    except ValueError:
        return False


def _check_date(key, text) -> None:
    import datetime as dt
    try:
        dt.date.fromisoformat(str(text))
    except ValueError:
        raise ConfigError(f"{key}: {text!r} is not an ISO date") from None


def build_config(values: dict[str, str]) -> RunConfig:
    """RunConfig from raw string values keyed ``group.name`` (or ``seed``/``out``)."""
    top: dict = {}
    groups: dict[str, dict] = {g: {} for g in GROUPS}
    for key, text in values.items():
        if key in ("seed", "out"):
            top[key] = _parse_value(key, str(text), RunConfig.__dataclass_fields__[key].default)
            continue
        group, _, name = key.partition(".")
        cls = GROUPS.get(group)
        names = {f.name: f for f in fields(cls)} if cls else {}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        groups[group][name] = _parse_value(key, str(text), names[name].default, names[name].type)
    try:
        cfg = RunConfig(**top, **{g: GROUPS[g](**kw) for g, kw in groups.items()},
                        explicit=frozenset(values))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    _validate(cfg)
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return build_config(values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.as_dict().items():
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
