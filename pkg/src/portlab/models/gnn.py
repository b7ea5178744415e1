"""Correlation graphs, message passing and the embedding-based covariance head."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..classical import CovarianceEstimate
from ..data import ReturnPanel
from ..errors import DataError, ShapeError, TrainingError
from ..numerics import PSD_FLOOR, Adam, nearest_psd, rng_stream, symmetrize, value_and_grad
from ..numerics import autograd as ag
from .common import (as_tensor, copy_params, decode_arrays, glorot, load_container,
                     save_container)

log = logging.getLogger(__name__)

MOMENTUM_HORIZONS = (5, 10, 21, 42, 63)
N_NODE_FEATURES = 3 + len(MOMENTUM_HORIZONS)


@dataclass(frozen=True)
class GNNConfig:
    window: int = 126
    threshold: float = 0.3
    layers: int = 2
    hidden: int = 16
    embed_dim: int = 8
    epochs: int = 500
    lr: float = 1e-2
    seed: int = 0
    target_window: int = 126
    stride: int = 5


@dataclass
class AssetGraph:
    """Undirected weighted graph over assets; no self-loops are stored."""

    adjacency: np.ndarray
    features: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def mean_operator(self) -> np.ndarray:
        """Row-normalised adjacency; isolated nodes get an all-zero row."""
        deg = self.adjacency.sum(axis=1, keepdims=True)
        return np.divide(self.adjacency, deg, out=np.zeros_like(self.adjacency), where=deg > 0)


@dataclass
class GnnParams:
    in_dim: int
    hidden: int
    layers: int
    embed_dim: int
    weights: dict

    def header(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": self.hidden, "layers": self.layers,
                "embed_dim": self.embed_dim}


def node_features(window_returns: np.ndarray) -> np.ndarray:
    """Per-asset [annualised mean, annualised std, momentum] of a window.

    Momentum is the compound return over the whole window followed by the
    compound returns over the trailing ``MOMENTUM_HORIZONS`` days (capped at
    the window length). Assets that move together share a momentum profile.
    """
    r = np.asarray(window_returns, dtype=np.float64)
    std = r.std(axis=0, ddof=1) if len(r) > 1 else np.zeros(r.shape[1])
    cols = [r.mean(axis=0) * 252, std * math.sqrt(252), np.prod(1.0 + r, axis=0) - 1.0]
    cols += [np.prod(1.0 + r[-min(h, len(r)):], axis=0) - 1.0 for h in MOMENTUM_HORIZONS]
    return np.column_stack(cols)


def _correlation(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xc = r - r.mean(axis=0)
    sd = np.sqrt((xc * xc).sum(axis=0))
    flat = sd <= 1e-300
    safe = np.where(flat, 1.0, sd)
    corr = (xc.T @ xc) / np.outer(safe, safe)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    return np.clip(symmetrize(corr), -1.0, 1.0), flat


def build_graph(returns, window: int | None = None, threshold: float = 0.3) -> AssetGraph:
    """Edge (i, j) iff ``|corr_ij| >= threshold`` over the trailing window; weight ``|corr_ij|``."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    r = returns.returns if isinstance(returns, ReturnPanel) else np.asarray(returns, dtype=np.float64)
    if window is not None:
        if window > len(r):
            raise ValueError(f"window {window} exceeds the {len(r)} rows available")
        r = r[-window:]
    if len(r) < 2:
        raise DataError("need at least 2 rows to build a graph")
    corr, flat = _correlation(r)
    warnings = [f"asset {i} has zero variance; isolated" for i in np.nonzero(flat)[0]]
    for w in warnings:
        log.warning(w)
    weight = np.abs(corr)
    adj = np.where(weight >= threshold, weight, 0.0)
    np.fill_diagonal(adj, 0.0)
    adj[flat, :] = 0.0
    adj[:, flat] = 0.0
    return AssetGraph(adj, node_features(r), warnings)


def init_gnn(config: GNNConfig = GNNConfig(), in_dim: int = N_NODE_FEATURES, rng=None) -> GnnParams:
    rng = rng if rng is not None else rng_stream(config.seed)
    w = {}
    f = in_dim
    for layer in range(config.layers):
        w[f"mp.{layer}.Ws"] = glorot(rng, f, config.hidden)
        w[f"mp.{layer}.Wn"] = glorot(rng, f, config.hidden)
        w[f"mp.{layer}.b"] = np.zeros(config.hidden)
        f = config.hidden
    w["out.W"] = glorot(rng, f, config.embed_dim)
    w["out.b"] = np.zeros(config.embed_dim)
    return GnnParams(in_dim, config.hidden, config.layers, config.embed_dim, w)


def _message_pass(h, mean_op, w_self, w_nbr, b):
    return ag.tanh(h @ w_self + (mean_op @ h) @ w_nbr + b)


def message_pass(graph: AssetGraph, h, layer: dict) -> np.ndarray:
    """One layer: ``tanh(h_v Ws + mean_{u in N(v)} a_vu h_u Wn + b)``.

    ``layer`` holds ``Ws``, ``Wn`` and ``b``. The neighbour mean is weighted by
    edge weights; an isolated node's neighbour term is zero.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != graph.n_nodes or h.shape[1] != layer["Ws"].shape[0]:
        raise ShapeError(f"node states {h.shape} do not fit layer input {layer['Ws'].shape[0]}")
    out = _message_pass(ag.Tensor(h), graph.mean_operator(), layer["Ws"], layer["Wn"], layer["b"])
    return out.data


def standardize_features(x: np.ndarray) -> np.ndarray:
    """Z-score each feature across the nodes of a graph; constant columns become 0."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-2, keepdims=True)
    sd = x.std(axis=-2, keepdims=True)
    return np.where(sd > 1e-12, (x - mu) / np.where(sd > 1e-12, sd, 1.0), 0.0)


def _embed(weights, x, mean_op, params: GnnParams):
    h = as_tensor(standardize_features(x))
    for layer in range(params.layers):
        h = _message_pass(h, mean_op, weights[f"mp.{layer}.Ws"], weights[f"mp.{layer}.Wn"],
                          weights[f"mp.{layer}.b"])
    return h @ weights["out.W"] + weights["out.b"]


def gnn_embed(graph: AssetGraph, params: GnnParams) -> np.ndarray:
    if graph.features.shape[1] != params.in_dim:
        raise ShapeError("node feature length does not match the network input")
    return _embed(ag.constants(params.weights), graph.features, graph.mean_operator(), params).data


def cosine_matrix(z: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Cosine similarities with unit diagonal; zero-norm rows are uncorrelated."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    zero = norms <= 1e-12
    unit = z / np.where(zero, 1.0, norms)[:, None]
    unit[zero] = 0.0
    c = np.clip(symmetrize(unit @ unit.T), -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c, np.nonzero(zero)[0].tolist()


def _lift_correlation(c: np.ndarray, vols: np.ndarray, floor: float) -> np.ndarray:
    """Blend ``c`` toward I just enough that ``diag(vols) c diag(vols)`` clears ``floor``.

    Blending keeps the unit diagonal, so the covariance diagonal stays equal
    to the observed variances.
    """
    smallest = float(np.min(vols ** 2))
    if smallest <= 0:
        return c
    target = floor / smallest * (1.0 + 1e-6) + 1e-14
    lam = float(np.linalg.eigvalsh(c)[0])
    if lam >= target or target >= 1.0:
        return c
    alpha = (target - lam) / (1.0 - lam)
    out = (1.0 - alpha) * c + alpha * np.eye(len(c))
    np.fill_diagonal(out, 1.0)
    return out


def gnn_covariance(embeddings, returns, window: int | None = None, tickers=None,
                   repair: bool = True, floor: float = PSD_FLOOR) -> CovarianceEstimate:
    """``D C D`` with C the embedding cosine matrix and D trailing sample volatilities."""
    if isinstance(returns, ReturnPanel):
        tickers = tickers or returns.tickers
        r = returns.returns
    else:
        r = np.asarray(returns, dtype=np.float64)
    if window is not None:
        r = r[-window:]
    if len(r) < 2:
        raise DataError("need at least 2 observations")
    c, zero = cosine_matrix(embeddings)
    for i in zero:
        log.warning("node %d has a zero-norm embedding; treated as uncorrelated", i)
    vols = r.std(axis=0, ddof=1)
    if repair:
        c = _lift_correlation(c, vols, floor)
    sigma = symmetrize(c * np.outer(vols, vols))
    if repair:
        sigma = nearest_psd(sigma, floor)
    tickers = tuple(tickers) if tickers is not None else tuple(str(i) for i in range(r.shape[1]))
    return CovarianceEstimate(tickers, sigma, "gnn")


# ---------------------------------------------------------------- training

@dataclass
class GraphBatch:
    """Stacked (estimation window, next window) pairs for the regression loss."""

    mean_ops: np.ndarray    # B x n x n
    features: np.ndarray    # B x n x f
    vols: np.ndarray        # B x n
    targets: np.ndarray     # B x n x n


def rolling_pairs(returns: np.ndarray, config: GNNConfig) -> GraphBatch:
    r = np.asarray(returns, dtype=np.float64)
    ops, feats, vols, targets = [], [], [], []
    for t in range(config.window, len(r) - config.target_window + 1, config.stride):
        est = r[t - config.window:t]
        nxt = r[t:t + config.target_window]
        g = build_graph(est, threshold=config.threshold)
        ops.append(g.mean_operator())
        feats.append(g.features)
        vols.append(est.std(axis=0, ddof=1))
        xc = nxt - nxt.mean(axis=0)
        targets.append(xc.T @ xc / (len(nxt) - 1))
    if len(ops) < 20:
        raise DataError(f"only {len(ops)} training pairs; need at least 20")
    return GraphBatch(np.array(ops), np.array(feats), np.array(vols), np.array(targets))


def frobenius_loss(weights, batch: GraphBatch, params: GnnParams):
    """Mean over pairs of ``||D C D - Sigma_next||_F`` (taped)."""
    z = _embed(weights, batch.features, batch.mean_ops, params)
    norm = ag.sqrt((z * z).sum(axis=-1, keepdims=True) + 1e-12)
    u = z / norm
    c = u @ ag.transpose(u)
    n = c.shape[-1]
    eye = np.eye(n)
    c = c * (1.0 - eye) + eye
    scale = batch.vols[:, :, None] * batch.vols[:, None, :]
    diff = c * scale - batch.targets
    per_pair = ag.sqrt((diff * diff).sum(axis=(1, 2)) + 1e-30)
    return per_pair.mean()


def train_gnn(returns, config: GNNConfig = GNNConfig(), init: GnnParams | None = None):
    """Adam on the Frobenius regression loss over rolling pairs.

    Returns ``(params, loss_history)``; ``epochs=0`` returns the initial params.
    """
    r = returns.returns if isinstance(returns, ReturnPanel) else np.asarray(returns, dtype=np.float64)
    batch = rolling_pairs(r, config)
    params = init or init_gnn(config)
    weights = copy_params(params.weights)
    opt = Adam(lr=config.lr)
    history = []
    for epoch in range(config.epochs):
        loss, grads = value_and_grad(lambda w: frobenius_loss(w, batch, params), weights)
        if not np.isfinite(loss):
            raise TrainingError(f"gnn loss diverged at epoch {epoch}")
        history.append(loss)
        weights = opt.step(weights, grads)
    if config.epochs:
        history.append(float(frobenius_loss(ag.constants(weights), batch, params).data))
    out = GnnParams(params.in_dim, params.hidden, params.layers, params.embed_dim, weights)
    return out, history


@dataclass
class GnnModel:
    params: GnnParams
    config: GNNConfig
    history: list = field(default_factory=list)

    def covariance(self, history: ReturnPanel) -> CovarianceEstimate:
        r = history.returns[-self.config.window:]
        graph = build_graph(r, threshold=self.config.threshold)
        z = gnn_embed(graph, self.params)
        return gnn_covariance(z, r, tickers=history.tickers)

    def save(self, path) -> None:
        save_container(path, "gnn", {**self.params.header(), "config": vars(self.config)},
                       self.params.weights, {"history": list(self.history)})

    @classmethod
    def load(cls, path) -> "GnnModel":
        header, weights, extra = load_container(path, "gnn")
        extra = decode_arrays(extra)
        params = GnnParams(header["in_dim"], header["hidden"], header["layers"],
                           header["embed_dim"], weights)
        return cls(params, GNNConfig(**header["config"]), extra.get("history", []))


def fit_gnn_model(train: ReturnPanel, config: GNNConfig = GNNConfig()) -> GnnModel:
    params, history = train_gnn(train, config)
    return GnnModel(params, config, history)
