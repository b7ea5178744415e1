"""The seven allocation strategies behind one ``allocate`` call."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .classical import (MVOConstraints, WeightVector, empirical_covariance, shrink_covariance,
                        solve_mvo, trailing_mean)
from .data import ReturnPanel
from .errors import ConfigError, DataError, StrategyError


class StrategyKind(enum.Enum):
    DRL_PPO = "drl_ppo"
    AUTOENCODER = "autoencoder"
    AE_DRL = "ae_drl"
    TRANSFORMER_GNN = "transformer_gnn"
    MVO = "mvo"
    EQUAL_WEIGHT = "equal_weight"
    SIXTY_FORTY = "sixty_forty"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown strategy {name!r}; valid names: {valid}") from None


ALL_STRATEGIES = tuple(StrategyKind)

# models each learning strategy needs from the registry
REQUIRED_MODELS = {
    StrategyKind.DRL_PPO: ("drl",),
    StrategyKind.AUTOENCODER: ("ae",),
    StrategyKind.AE_DRL: ("ae_drl", "ae"),
    StrategyKind.TRANSFORMER_GNN: ("tf", "gnn"),
}


@dataclass(frozen=True)
class StrategyConfig:
    window: int = 252
    shrink_intensity: float | str = "auto"
    mode: str = "max-sharpe"
    target: float | None = None
    cap: float = 0.6
    rf_annual: float = 0.0
    equities: tuple = ("SPY",)
    bonds: tuple = ("TLT",)

    def constraints(self) -> MVOConstraints:
        return MVOConstraints(self.mode, self.target, self.rf_annual, self.cap)


@dataclass(frozen=True)
class AllocationContext:
    """Everything a strategy may look at on a rebalance date.

    ``history`` holds only returns dated strictly before ``date``.
    """

    history: ReturnPanel
    date: np.datetime64
    prev: WeightVector | None = None
    models: dict = field(default_factory=dict)
    config: StrategyConfig = StrategyConfig()

    def __post_init__(self):
        object.__setattr__(self, "date", np.datetime64(self.date, "D"))
        if len(self.history) and self.history.dates[-1] >= self.date:
            raise DataError("allocation history must end before the rebalance date")

    @property
    def tickers(self) -> tuple:
        return self.history.tickers

    def current_weights(self) -> np.ndarray:
        n = len(self.tickers)
        return self.prev.w if self.prev is not None else np.full(n, 1.0 / n)


def equal_weight(tickers) -> WeightVector:
    n = len(tickers)
    return WeightVector(tickers, np.full(n, 1.0 / n))


def sixty_forty(tickers, equities=("SPY",), bonds=("TLT",)) -> WeightVector:
    tickers = tuple(tickers)
    missing = [t for t in (*equities, *bonds) if t not in tickers]
    if missing or not equities or not bonds:
        raise ConfigError(f"60/40 legs not in the universe: {missing or 'empty leg'}")
    w = np.zeros(len(tickers))
    for t in equities:
        w[tickers.index(t)] += 0.6 / len(equities)
    for t in bonds:
        w[tickers.index(t)] += 0.4 / len(bonds)
    return WeightVector(tickers, w)


def _trailing(ctx: AllocationContext) -> ReturnPanel:
    if len(ctx.history) < 2:
        raise DataError("need at least 2 days of history")
    return ctx.history.rows(slice(-ctx.config.window, None))


def _mvo(ctx: AllocationContext, sigma, mu=None) -> WeightVector:
    mu = mu if mu is not None else trailing_mean(_trailing(ctx))
    return solve_mvo(mu, sigma, ctx.config.constraints())


def _classical(ctx: AllocationContext) -> WeightVector:
    hist = _trailing(ctx)
    emp = empirical_covariance(hist)
    sigma = shrink_covariance(emp, ctx.config.shrink_intensity, n_obs=len(hist))
    return _mvo(ctx, sigma)


def _drl(ctx: AllocationContext, key: str) -> WeightVector:
    agent = ctx.models[key]
    r = ctx.history.returns
    latent = ctx.models["ae"].latent_features(r[-1:])[0] if agent.uses_latent else None
    return WeightVector(ctx.tickers, agent.allocate(r, ctx.current_weights(), latent))


def _dispatch(kind: StrategyKind, ctx: AllocationContext) -> WeightVector:
    if kind is StrategyKind.EQUAL_WEIGHT:
        return equal_weight(ctx.tickers)
    if kind is StrategyKind.SIXTY_FORTY:
        return sixty_forty(ctx.tickers, ctx.config.equities, ctx.config.bonds)
    if kind is StrategyKind.MVO:
        return _classical(ctx)
    if kind is StrategyKind.AUTOENCODER:
        return _mvo(ctx, ctx.models["ae"].covariance(_trailing(ctx)))
    if kind is StrategyKind.TRANSFORMER_GNN:
        from .models.transformer import forecast_returns
        mu = forecast_returns(ctx.models["tf"], ctx.history)
        return _mvo(ctx, ctx.models["gnn"].covariance(ctx.history), mu)
    if kind is StrategyKind.DRL_PPO:
        return _drl(ctx, "drl")
    if kind is StrategyKind.AE_DRL:
        return _drl(ctx, "ae_drl")
    raise ConfigError(f"unhandled strategy {kind}")


def allocate(kind: StrategyKind | str, ctx: AllocationContext) -> WeightVector:
    """Target weights for ``kind`` on ``ctx.date``.

    Missing models raise ConfigError; any other failure is re-raised as a
    StrategyError naming the strategy.
    """
    kind = StrategyKind.parse(kind) if isinstance(kind, str) else kind
    missing = [m for m in REQUIRED_MODELS.get(kind, ()) if ctx.models.get(m) is None]
    if missing:
        raise ConfigError(f"strategy {kind.value} needs trained model(s): {', '.join(missing)}")
    try:
        return _dispatch(kind, ctx)
    except ConfigError:
        raise
    except Exception as exc:
        raise StrategyError(kind.value, exc) from exc
