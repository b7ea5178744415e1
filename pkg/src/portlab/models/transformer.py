"""Encoder-only transformer producing next-day return forecasts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..classical import ExpectedReturns
from ..data import ReturnPanel
from ..errors import ShapeError, TrainingError
from ..numerics import Adam, rng_stream, value_and_grad
from ..numerics import autograd as ag
from .common import (copy_params, decode_arrays, glorot, load_container, safe_scaler,
                     save_container)


@dataclass(frozen=True)
class TransformerConfig:
    window: int = 60
    d_model: int = 32
    heads: int = 4
    layers: int = 2
    ff: int = 64
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    batch: int = 64
    patience: int = 5
    val_fraction: float = 0.1
    positional: bool = True
    ln_eps: float = 1e-5


@dataclass
class TransformerParams:
    n_assets: int
    d_model: int
    heads: int
    layers: int
    ff: int
    weights: dict
    positional: bool = True
    ln_eps: float = 1e-5

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def header(self) -> dict:
        return {"n_assets": self.n_assets, "d_model": self.d_model, "heads": self.heads,
                "layers": self.layers, "ff": self.ff, "positional": self.positional,
                "ln_eps": self.ln_eps}


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: ``PE[i, 2j] = sin(i / 10000^(2j/d))``, ``PE[i, 2j+1] = cos(...)``."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(pos / rate)
    pe[:, 1::2] = np.cos(pos / rate)
    return pe


def _ordered_sum(x, axis: int, canonical: bool) -> np.ndarray:
    """Left-to-right sum along ``axis``; with ``canonical`` the terms are sorted first.

    Sorting fixes the summation order independently of how the terms were
    arranged, so permuting them cannot change a single bit of the result.
    """
    x = np.moveaxis(x, axis, -1)
    if canonical:
        x = np.sort(x, axis=-1)
    out = np.zeros(x.shape[:-1])
    for i in range(x.shape[-1]):
        out = out + x[..., i]
    return out


def attention_weights(q, k) -> np.ndarray:
    """Row-stochastic ``softmax(Q K^T / sqrt(d_k))``; exactly equivariant under row permutations."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = _ordered_sum(q[..., :, None, :] * k[..., None, :, :], -1, False) / math.sqrt(q.shape[-1])
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / _ordered_sum(e, -1, True)[..., None]


def attention(q, k, v) -> np.ndarray:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d_k)) V``.

    Reference operator: reductions over keys run in sorted order, so permuting
    the rows of Q, K and V together permutes the output rows bit for bit.
    Training uses the batched tape version inside ``_multi_head``.
    """
    v = np.asarray(v, dtype=np.float64)
    a = attention_weights(q, k)
    if a.shape[-1] != v.shape[-2]:
        raise ShapeError(f"{a.shape[-1]} keys but {v.shape[-2]} value rows")
    return _ordered_sum(a[..., :, :, None] * v[..., None, :, :], -2, True)


def init_transformer(n_assets: int, config: TransformerConfig = TransformerConfig(),
                     rng=None) -> TransformerParams:
    if config.d_model % config.heads:
        raise ValueError("d_model must be divisible by the number of heads")
    rng = rng if rng is not None else rng_stream(config.seed)
    d, f = config.d_model, config.ff
    w = {"in.W": glorot(rng, n_assets, d), "in.b": np.zeros(d)}
    for layer in range(config.layers):
        p = f"l{layer}."
        for name in ("Wq", "Wk", "Wv", "Wo"):
            w[p + name] = glorot(rng, d, d)
        w[p + "ln1.g"], w[p + "ln1.b"] = np.ones(d), np.zeros(d)
        w[p + "ff.W1"], w[p + "ff.b1"] = glorot(rng, d, f), np.zeros(f)
        w[p + "ff.W2"], w[p + "ff.b2"] = glorot(rng, f, d), np.zeros(d)
        w[p + "ln2.g"], w[p + "ln2.b"] = np.ones(d), np.zeros(d)
    w["out.W"] = glorot(rng, d, n_assets)
    w["out.b"] = np.zeros(n_assets)
    return TransformerParams(n_assets, d, config.heads, config.layers, config.ff, w,
                             config.positional, config.ln_eps)


def _split_heads(x, heads: int):
    b, t, d = x.shape
    return ag.transpose(ag.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dk = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def _multi_head(w, z, prefix: str, heads: int):
    q = _split_heads(z @ w[prefix + "Wq"], heads)
    k = _split_heads(z @ w[prefix + "Wk"], heads)
    v = _split_heads(z @ w[prefix + "Wv"], heads)
    scores = q @ ag.transpose(k, (0, 1, 3, 2)) * (1.0 / math.sqrt(q.shape[-1]))
    return _merge_heads(ag.softmax(scores, axis=-1) @ v) @ w[prefix + "Wo"]


def _encoder_layer(w, z, layer: int, params: TransformerParams):
    p = f"l{layer}."
    z = ag.layer_norm(z + _multi_head(w, z, p, params.heads), w[p + "ln1.g"], w[p + "ln1.b"],
                      params.ln_eps)
    ff = ag.relu(z @ w[p + "ff.W1"] + w[p + "ff.b1"]) @ w[p + "ff.W2"] + w[p + "ff.b2"]
    return ag.layer_norm(z + ff, w[p + "ln2.g"], w[p + "ln2.b"], params.ln_eps)


def _forward(w, x, params: TransformerParams):
    """``x``: batch x L x n standardised returns -> batch x n forecasts."""
    z = x @ w["in.W"] + w["in.b"]
    if params.positional:
        z = z + positional_encoding(x.shape[1], params.d_model)
    for layer in range(params.layers):
        z = _encoder_layer(w, z, layer, params)
    return z[:, -1, :] @ w["out.W"] + w["out.b"]


def multi_head(x, params: TransformerParams, layer: int = 0) -> np.ndarray:
    """Multi-head attention of one encoder layer on a single ``T x d_model`` sequence.

    Concatenated heads times ``W^O``, before the residual/normalisation steps.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_model:
        raise ShapeError(f"expected T x {params.d_model}, got {x.shape}")
    out = _multi_head(ag.constants(params.weights), ag.Tensor(x[None]), f"l{layer}.", params.heads)
    return out.data[0]


def encoder_layer(x, params: TransformerParams, layer: int = 0) -> np.ndarray:
    """Full post-norm encoder layer (attention, residual, norm, feed-forward, residual, norm)."""
    x = np.asarray(x, dtype=np.float64)
    return _encoder_layer(ag.constants(params.weights), ag.Tensor(x[None]), layer, params).data[0]


def predict(params: TransformerParams, windows) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-1] != params.n_assets:
        raise ShapeError(f"windows have {x.shape[-1]} assets, expected {params.n_assets}")
    out = _forward(ag.constants(params.weights), ag.Tensor(x), params).data
    return out[0] if single else out


def mse_loss(w, x, y, params: TransformerParams):
    diff = _forward(w, x, params) - y
    return (diff * diff).mean()


def make_windows(inputs: np.ndarray, targets: np.ndarray, length: int):
    """Windows of ``length`` input rows, each paired with the next row's target."""
    n = len(inputs) - length
    if n <= 0:
        return np.empty((0, length, inputs.shape[1])), np.empty((0, targets.shape[1]))
    x = np.lib.stride_tricks.sliding_window_view(inputs[:-1], length, axis=0)
    x = np.moveaxis(x, -1, 1)[:n]
    return np.ascontiguousarray(x), targets[length:length + n]


def fit_transformer(windows, targets, config: TransformerConfig = TransformerConfig(),
                    val_windows=None, val_targets=None, init: TransformerParams | None = None):
    """Minibatch Adam on next-step MSE with early stopping on validation MSE.

    Returns ``(params, history)`` where history holds per-epoch train and
    validation MSE; the returned params are the best-validation snapshot.
    """
    x = np.asarray(windows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    params = init or init_transformer(x.shape[-1], config)
    weights = copy_params(params.weights)
    rng = rng_stream(config.seed + 1)
    opt = Adam(lr=config.lr)

    def full_mse(w, xs, ys):
        return float(mse_loss(ag.constants(w), xs, ys, params).data)

    has_val = val_windows is not None and len(val_windows) > 0
    history = {"train": [full_mse(weights, x, y)], "val": []}
    if has_val:
        history["val"].append(full_mse(weights, val_windows, val_targets))
    best = (history["val"][0] if has_val else math.inf, copy_params(weights))
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch):
            idx = order[start:start + config.batch]
            loss, grads = value_and_grad(lambda w: mse_loss(w, x[idx], y[idx], params), weights)
            if not np.isfinite(loss):
                raise TrainingError(f"transformer loss diverged at epoch {epoch}")
            weights = opt.step(weights, grads)
        history["train"].append(full_mse(weights, x, y))
        if not np.isfinite(history["train"][-1]):
            raise TrainingError(f"transformer loss diverged at epoch {epoch}")
        if has_val:
            v = full_mse(weights, val_windows, val_targets)
            history["val"].append(v)
            if v < best[0]:
                best, stale = (v, copy_params(weights)), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    final = best[1] if has_val else weights
    out = TransformerParams(params.n_assets, params.d_model, params.heads, params.layers,
                            params.ff, final, params.positional, params.ln_eps)
    return out, history


@dataclass
class TransformerModel:
    params: TransformerParams
    window: int
    mean: np.ndarray
    std: np.ndarray
    history: dict = field(default_factory=dict)
    tickers: tuple = ()

    def forecast(self, recent_returns: np.ndarray) -> np.ndarray:
        r = np.asarray(recent_returns, dtype=np.float64)
        if len(r) < self.window:
            raise ValueError(f"need {self.window} days of history, got {len(r)}")
        return predict(self.params, (r[-self.window:] - self.mean) / self.std)

    def save(self, path) -> None:
        save_container(path, "transformer", {**self.params.header(), "window": self.window},
                       self.params.weights, {"mean": self.mean, "std": self.std,
                                             "history": self.history,
                                             "tickers": list(self.tickers)})

    @classmethod
    def load(cls, path) -> "TransformerModel":
        header, weights, extra = load_container(path, "transformer")
        extra = decode_arrays(extra)
        params = TransformerParams(header["n_assets"], header["d_model"], header["heads"],
                                   header["layers"], header["ff"], weights,
                                   header["positional"], header["ln_eps"])
        return cls(params, header["window"], extra["mean"], extra["std"],
                   extra.get("history", {}), tuple(extra.get("tickers", ())))


def forecast_returns(model: TransformerModel, window, tickers=None) -> ExpectedReturns:
    """Next-day expected raw returns from the trailing window of raw returns."""
    r = window.returns if isinstance(window, ReturnPanel) else np.asarray(window, dtype=np.float64)
    if tickers is None:
        tickers = window.tickers if isinstance(window, ReturnPanel) else model.tickers
    return ExpectedReturns(tuple(tickers), model.forecast(r))


def train_transformer(train: ReturnPanel, config: TransformerConfig = TransformerConfig()) -> TransformerModel:
    """Standardise inputs with training statistics, target raw next-day returns.

    The last ``val_fraction`` of windows is held out for early stopping.
    """
    r = train.returns
    if len(r) < 5 * config.window:
        raise ValueError(f"need at least {5 * config.window} training days, got {len(r)}")
    mean, std = safe_scaler(r)
    x, y = make_windows((r - mean) / std, r, config.window)
    n_val = max(1, int(round(config.val_fraction * len(x))))
    params, history = fit_transformer(x[:-n_val], y[:-n_val], config, x[-n_val:], y[-n_val:])
    return TransformerModel(params, config.window, mean, std, history, train.tickers)
