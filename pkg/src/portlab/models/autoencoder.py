"""Return-vector autoencoder and the latent-factor covariance estimator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..classical import CovarianceEstimate
from ..data import ReturnPanel
from ..errors import DataError, ShapeError, TrainingError
from ..numerics import Adam, nearest_psd, rng_stream, symmetrize, value_and_grad
from ..numerics import autograd as ag
from .common import (as_tensor, copy_params, decode_arrays, dense_stack, load_container,
                     run_stack, safe_scaler, save_container)


@dataclass(frozen=True)
class AEConfig:
    latent_dim: int = 3
    hidden: int = 16
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 0
    activation: str = "tanh"


@dataclass
class AutoencoderParams:
    """Encoder ``d -> hidden -> k`` and decoder ``k -> hidden -> d``.

    ``hidden == 0`` drops the hidden layers (one affine map each way).
    """

    input_dim: int
    latent_dim: int
    hidden: int
    activation: str
    weights: dict

    @property
    def enc_sizes(self) -> list[int]:
        mid = [self.hidden] if self.hidden else []
        return [self.input_dim, *mid, self.latent_dim]

    @property
    def dec_sizes(self) -> list[int]:
        return self.enc_sizes[::-1]

    def header(self) -> dict:
        return {"input_dim": self.input_dim, "latent_dim": self.latent_dim,
                "hidden": self.hidden, "activation": self.activation,
                "enc_sizes": self.enc_sizes, "dec_sizes": self.dec_sizes}


def init_autoencoder(input_dim: int, config: AEConfig, rng=None) -> AutoencoderParams:
    if config.latent_dim > input_dim:
        raise ShapeError("latent dimension cannot exceed the input dimension")
    rng = rng if rng is not None else rng_stream(config.seed)
    p = AutoencoderParams(input_dim, config.latent_dim, config.hidden, config.activation, {})
    p.weights.update(dense_stack(rng, p.enc_sizes, "enc"))
    p.weights.update(dense_stack(rng, p.dec_sizes, "dec"))
    return p


def _encode(w, x, p: AutoencoderParams):
    return run_stack(w, x, "enc", len(p.enc_sizes) - 1, p.activation)


def _decode(w, z, p: AutoencoderParams):
    return run_stack(w, z, "dec", len(p.dec_sizes) - 1, p.activation)


def encode(x, params: AutoencoderParams) -> np.ndarray:
    """Latent code(s) for one vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, expected {params.input_dim}")
    single = x.ndim == 1
    z = _encode(ag.constants(params.weights), ag.Tensor(np.atleast_2d(x)), params).data
    return z[0] if single else z


def decode(z, params: AutoencoderParams) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.latent_dim:
        raise ShapeError(f"code has {z.shape[-1]} entries, expected {params.latent_dim}")
    single = z.ndim == 1
    x = _decode(ag.constants(params.weights), ag.Tensor(np.atleast_2d(z)), params).data
    return x[0] if single else x


def reconstruct(x, params: AutoencoderParams) -> np.ndarray:
    return decode(encode(x, params), params)


def reconstruction_loss(x, x_hat) -> float:
    """Squared L2 reconstruction error of one sample."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError("input and reconstruction differ in shape")
    return float(np.sum((x - x_hat) ** 2))


def batch_loss(weights, x, params: AutoencoderParams):
    """Mean over rows of the squared reconstruction error (taped)."""
    x_t = as_tensor(x)
    diff = _decode(weights, _encode(weights, x_t, params), params) - x_t
    return (diff * diff).sum(axis=1).mean()


def train_autoencoder(data, config: AEConfig = AEConfig(), init: AutoencoderParams | None = None):
    """Full-batch Adam on the mean reconstruction loss.

    ``data`` rows are used as given (standardise beforehand). Returns the
    trained parameters and the per-epoch loss history (loss before each
    epoch's update; the last entry is the loss after the final update).
    """
    x = data.returns if isinstance(data, ReturnPanel) else np.asarray(data, dtype=np.float64)
    params = init or init_autoencoder(x.shape[1], config)
    weights = copy_params(params.weights)
    opt = Adam(lr=config.lr)
    history = []
    for epoch in range(config.epochs):
        loss, grads = value_and_grad(lambda w: batch_loss(w, x, params), weights)
        if not np.isfinite(loss):
            raise TrainingError(f"autoencoder loss diverged at epoch {epoch}")
        history.append(loss)
        weights = opt.step(weights, grads)
    final = float(batch_loss(ag.constants(weights), x, params).data)
    if not np.isfinite(final):
        raise TrainingError(f"autoencoder loss diverged at epoch {config.epochs}")
    history.append(final)
    trained = AutoencoderParams(params.input_dim, params.latent_dim, params.hidden,
                                params.activation, weights)
    return trained, history


def ae_covariance(params: AutoencoderParams, returns, scale: np.ndarray | None = None,
                  center: np.ndarray | None = None, repair: bool = True) -> CovarianceEstimate:
    """Factor-style covariance from the reconstructed series.

    ``Cov(X_hat) + diag(Var(X - X_hat))``. When the net was trained on
    standardised returns pass the training ``center``/``scale``; the result
    is mapped back to return units by ``diag(scale) . diag(scale)``.
    """
    tickers = returns.tickers if isinstance(returns, ReturnPanel) else tuple(
        str(i) for i in range(np.shape(returns)[1]))
    x = returns.returns if isinstance(returns, ReturnPanel) else np.asarray(returns, dtype=np.float64)
    if len(x) < 2:
        raise DataError("need at least 2 observations")
    if scale is not None:
        x = (x - (center if center is not None else 0.0)) / scale
    x_hat = reconstruct(x, params)
    xc = x_hat - x_hat.mean(axis=0)
    sigma = xc.T @ xc / (len(x) - 1) + np.diag(np.var(x - x_hat, axis=0, ddof=1))
    if scale is not None:
        sigma = sigma * np.outer(scale, scale)
    sigma = symmetrize(sigma)
    if repair:
        sigma = nearest_psd(sigma)
    return CovarianceEstimate(tickers, sigma, "autoencoder")


@dataclass
class AutoencoderModel:
    """Trained net plus the scalers needed to use it on raw returns."""

    params: AutoencoderParams
    mean: np.ndarray
    std: np.ndarray
    latent_mean: np.ndarray
    latent_std: np.ndarray
    history: list = field(default_factory=list)
    tickers: tuple = ()

    def standardize(self, r: np.ndarray) -> np.ndarray:
        return (r - self.mean) / self.std

    def latent_features(self, r: np.ndarray) -> np.ndarray:
        """Standardised latent codes for raw return rows."""
        z = encode(self.standardize(np.atleast_2d(r)), self.params)
        return (z - self.latent_mean) / self.latent_std

    def covariance(self, returns: ReturnPanel) -> CovarianceEstimate:
        return ae_covariance(self.params, returns, self.std, self.mean)

    def save(self, path) -> None:
        save_container(path, "autoencoder", self.params.header(), self.params.weights,
                       {"mean": self.mean, "std": self.std, "latent_mean": self.latent_mean,
                        "latent_std": self.latent_std, "history": list(self.history),
                        "tickers": list(self.tickers)})

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        header, weights, extra = load_container(path, "autoencoder")
        extra = decode_arrays(extra)
        params = AutoencoderParams(header["input_dim"], header["latent_dim"], header["hidden"],
                                   header["activation"], weights)
        return cls(params, extra["mean"], extra["std"], extra["latent_mean"], extra["latent_std"],
                   extra.get("history", []), tuple(extra.get("tickers", ())))


def fit_autoencoder_model(train: ReturnPanel, config: AEConfig = AEConfig()) -> AutoencoderModel:
    mean, std = safe_scaler(train.returns)
    x = (train.returns - mean) / std
    params, history = train_autoencoder(x, config)
    z = encode(x, params)
    z_mean, z_std = safe_scaler(z)
    return AutoencoderModel(params, mean, std, z_mean, z_std, history, train.tickers)
