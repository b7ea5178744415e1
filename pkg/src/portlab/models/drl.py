"""Portfolio MDP over historical returns and a PPO actor-critic agent.

The environment replays history: the state at step ``t`` holds the
standardised returns of the ``W`` days before ``t``, the weights chosen at
the previous step and, for the hybrid agent, the latent code of day ``t-1``.
An action is a vector of logits; weights are ``softmax(logits)`` projected
onto the capped simplex and the reward is the net log growth of that day.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..data import ReturnPanel
from ..errors import ActionError, TrainingError
from ..numerics import Adam, project_capped_simplex, rng_stream, softmax, value_and_grad
from ..numerics import autograd as ag
from .common import (copy_params, decode_arrays, dense_stack, load_container, run_stack,
                     safe_scaler, save_container)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DRLConfig:
    window: int = 30
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    iterations: int = 200
    episode_length: int = 126
    episodes_per_iter: int = 4
    hidden: int = 64
    cost_rate: float = 0.001
    cap: float = 0.6
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    init_log_std: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class EnvConfig:
    """Replay data plus MDP constants. ``states`` are standardised returns."""

    returns: np.ndarray
    states: np.ndarray
    window: int = 30
    episode_length: int = 126
    cost_rate: float = 0.001
    gamma: float = 0.99
    cap: float = 1.0
    latent: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.cost_rate < 0:
            raise ValueError("cost rate must be non-negative")

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def state_dim(self) -> int:
        k = 0 if self.latent is None else self.latent.shape[1]
        return self.window * self.n_assets + self.n_assets + k


@dataclass(frozen=True)
class EnvState:
    t: int
    start: int
    window: np.ndarray
    weights: np.ndarray
    latent: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        parts = [self.window.reshape(-1), self.weights]
        if self.latent is not None:
            parts.append(self.latent)
        return np.concatenate(parts)


def _state_at(config: EnvConfig, t: int, start: int, weights: np.ndarray) -> EnvState:
    latent = None if config.latent is None else config.latent[t - 1]
    return EnvState(t, start, config.states[t - config.window:t], weights, latent)


def env_reset(config: EnvConfig, start: int | None = None, rng=None) -> EnvState:
    """Start an episode at return index ``start`` (random when None) with equal weights."""
    last = len(config.returns) - config.episode_length
    if last < config.window:
        raise ValueError("history too short for one episode")
    if start is None:
        rng = rng if rng is not None else rng_stream(0)
        start = int(rng.integers(config.window, last + 1))
    if start < config.window or start > last:
        raise ValueError(f"start {start} outside [{config.window}, {last}]")
    n = config.n_assets
    return _state_at(config, start, start, np.full(n, 1.0 / n))


def action_weights(logits, cap: float) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ActionError("action logits must be finite")
    return project_capped_simplex(softmax(logits), cap)


def env_step(state: EnvState, logits, config: EnvConfig):
    """Apply an action; returns ``(next_state, reward, done)``."""
    if state.t - state.start >= config.episode_length:
        raise ValueError("episode already finished")
    w = action_weights(logits, config.cap)
    turnover = float(np.abs(w - state.weights).sum())
    gross = float(w @ config.returns[state.t])
    reward = math.log(1.0 + gross - config.cost_rate * turnover)
    t = state.t + 1
    done = t - state.start >= config.episode_length
    nxt = _state_at(config, t, state.start, w)
    return nxt, reward, done


# ---------------------------------------------------------------- agent

@dataclass
class AgentParams:
    state_dim: int
    n_assets: int
    hidden: int
    weights: dict

    def header(self) -> dict:
        return {"state_dim": self.state_dim, "n_assets": self.n_assets, "hidden": self.hidden}


def init_agent(state_dim: int, n_assets: int, hidden: int = 64, init_log_std: float = 0.0,
               rng=None) -> AgentParams:
    rng = rng if rng is not None else rng_stream(0)
    w = dense_stack(rng, [state_dim, hidden, hidden, n_assets], "pi")
    w["pi.2.W"] *= 0.01
    w.update(dense_stack(rng, [state_dim, hidden, hidden, 1], "v"))
    w["log_std"] = np.full(n_assets, float(init_log_std))
    return AgentParams(state_dim, n_assets, hidden, w)


def _policy_mean(w, s):
    return run_stack(w, s, "pi", 3, "tanh")


def _value(w, s):
    return run_stack(w, s, "v", 3, "tanh")


def gaussian_log_prob(action, mean, log_std) -> np.ndarray:
    z = (np.asarray(action) - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * len(log_std) * LOG_2PI


def policy_act(params: AgentParams, state, rng=None, explore: bool = False):
    """Mean logits (deterministic) or a Gaussian sample around them, plus its log-probability."""
    s = state.vector() if isinstance(state, EnvState) else np.asarray(state, dtype=np.float64)
    mean = _policy_mean(ag.constants(params.weights), ag.Tensor(s[None])).data[0]
    log_std = params.weights["log_std"]
    if explore:
        rng = rng if rng is not None else rng_stream(0)
        action = mean + np.exp(log_std) * rng.standard_normal(len(mean))
    else:
        action = mean
    return action, float(gaussian_log_prob(action, mean, log_std))


def estimate_value(params: AgentParams, state) -> float:
    s = state.vector() if isinstance(state, EnvState) else np.asarray(state, dtype=np.float64)
    return float(_value(ag.constants(params.weights), ag.Tensor(s[None])).data[0, 0])


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    last_value: float = 0.0

    def __len__(self):
        return len(self.rewards)


def compute_advantages(rewards, values, gamma: float, lam: float, last_value: float = 0.0):
    """Generalised advantage estimates and returns-to-go (``adv + V``).

    ``last_value`` bootstraps the state after the final step (0 for a true end).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty trajectory")
    adv = np.zeros_like(r)
    running = 0.0
    nxt = last_value
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nxt - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        nxt = v[t]
    return adv, adv + v


def ppo_loss(w, batch: dict, clip: float = 0.2, value_coef: float = 0.5,
             entropy_coef: float = 0.01):
    """Clipped surrogate + value MSE - entropy bonus (taped).

    ``batch`` keys: states, actions, old_log_probs, advantages, returns.
    Returns the total loss tensor and a dict of its parts.
    """
    s = batch["states"]
    mean = _policy_mean(w, s)
    log_std = w["log_std"]
    z = (batch["actions"] - mean) * ag.exp(-log_std)
    n = batch["actions"].shape[1]
    log_prob = (z * z).sum(axis=1) * -0.5 - log_std.sum() - 0.5 * n * LOG_2PI
    ratio = ag.exp(log_prob - batch["old_log_probs"])
    adv = batch["advantages"]
    surrogate = ag.minimum(ratio * adv, ag.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)
    policy_loss = -surrogate.mean()
    v = _value(w, s).reshape(-1)
    value_loss = ((v - batch["returns"]) ** 2).mean()
    entropy = log_std.sum() + 0.5 * n * (1.0 + LOG_2PI)
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy
    return total, {"policy": policy_loss, "value": value_loss, "entropy": entropy, "ratio": ratio}


def _flatten(trajectories, config: DRLConfig) -> dict:
    states, actions, logp, adv, ret = [], [], [], [], []
    for tr in trajectories:
        a, r = compute_advantages(tr.rewards, tr.values, config.gamma, config.lam, tr.last_value)
        states += tr.states
        actions += tr.actions
        logp += tr.log_probs
        adv.append(a)
        ret.append(r)
    return {"states": np.array(states), "actions": np.array(actions),
            "old_log_probs": np.array(logp), "advantages": np.concatenate(adv),
            "returns": np.concatenate(ret)}


def ppo_update(params: AgentParams, trajectories, config: DRLConfig = DRLConfig(),
               rng=None, optimizer: Adam | None = None):
    """K epochs of minibatch Adam on the PPO loss. Returns ``(params, diagnostics)``."""
    if not trajectories or any(len(t) == 0 for t in trajectories):
        raise ValueError("need at least one complete trajectory")
    rng = rng if rng is not None else rng_stream(config.seed)
    opt = optimizer or Adam(lr=config.lr)
    data = _flatten(trajectories, config)
    a = data["advantages"]
    data["advantages"] = (a - a.mean()) / (a.std() + 1e-8)
    weights = copy_params(params.weights)
    n = len(a)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "mean_ratio": [], "clip_fraction": []}
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start:start + config.minibatch]
            mb = {k: v[idx] for k, v in data.items()}
            parts = {}

            def loss_fn(w):
                total, p = ppo_loss(w, mb, config.clip, config.value_coef, config.entropy_coef)
                parts.update(p)
                return total

            loss, grads = value_and_grad(loss_fn, weights)
            if not np.isfinite(loss):
                raise TrainingError(f"PPO loss is not finite (epoch {epoch})")
            weights = opt.step(weights, grads)
            ratio = parts["ratio"].data
            stats["policy_loss"].append(float(parts["policy"].data))
            stats["value_loss"].append(float(parts["value"].data))
            stats["entropy"].append(float(parts["entropy"].data))
            stats["mean_ratio"].append(float(ratio.mean()))
            stats["clip_fraction"].append(float(np.mean(np.abs(ratio - 1.0) > config.clip)))
    diagnostics = {k: float(np.mean(v)) for k, v in stats.items()}
    return AgentParams(params.state_dim, params.n_assets, params.hidden, weights), diagnostics


def collect_trajectory(params: AgentParams, env: EnvConfig, start: int, rng) -> Trajectory:
    state = env_reset(env, start)
    traj = Trajectory()
    done = False
    while not done:
        s = state.vector()
        action, logp = policy_act(params, s, rng, explore=True)
        traj.states.append(s)
        traj.actions.append(action)
        traj.log_probs.append(logp)
        traj.values.append(estimate_value(params, s))
        state, reward, done = env_step(state, action, env)
        traj.weights.append(state.weights)
        traj.rewards.append(reward)
    traj.last_value = estimate_value(params, state)
    return traj


@dataclass
class DRLModel:
    params: AgentParams
    config: DRLConfig
    mean: np.ndarray
    std: np.ndarray
    uses_latent: bool = False
    history: list = field(default_factory=list)
    tickers: tuple = ()

    def state_vector(self, recent_returns: np.ndarray, weights: np.ndarray,
                     latent: np.ndarray | None = None) -> np.ndarray:
        r = np.asarray(recent_returns, dtype=np.float64)
        if len(r) < self.config.window:
            raise ValueError(f"need {self.config.window} days of history, got {len(r)}")
        window = (r[-self.config.window:] - self.mean) / self.std
        parts = [window.reshape(-1), np.asarray(weights, dtype=np.float64)]
        if self.uses_latent:
            if latent is None:
                raise ValueError("hybrid agent needs a latent code")
            parts.append(np.asarray(latent, dtype=np.float64).reshape(-1))
        return np.concatenate(parts)

    def allocate(self, recent_returns, weights, latent=None) -> np.ndarray:
        logits, _ = policy_act(self.params, self.state_vector(recent_returns, weights, latent))
        return action_weights(logits, self.config.cap)

    def save(self, path) -> None:
        save_container(path, "drl", {**self.params.header(), "config": vars(self.config),
                                     "uses_latent": self.uses_latent},
                       self.params.weights, {"mean": self.mean, "std": self.std,
                                             "history": list(self.history),
                                             "tickers": list(self.tickers)})

    @classmethod
    def load(cls, path) -> "DRLModel":
        header, weights, extra = load_container(path, "drl")
        extra = decode_arrays(extra)
        params = AgentParams(header["state_dim"], header["n_assets"], header["hidden"], weights)
        return cls(params, DRLConfig(**header["config"]), extra["mean"], extra["std"],
                   header["uses_latent"], extra.get("history", []), tuple(extra.get("tickers", ())))


def make_env(train: ReturnPanel, config: DRLConfig, latent_source=None):
    r = train.returns
    mean, std = safe_scaler(r)
    latent = None if latent_source is None else latent_source.latent_features(r)
    env = EnvConfig(r, (r - mean) / std, config.window, config.episode_length, config.cost_rate,
                    config.gamma, config.cap, latent)
    return env, mean, std


def train_drl(train: ReturnPanel, config: DRLConfig = DRLConfig(), latent_source=None,
              callback=None) -> DRLModel:
    """Alternate rollouts from random episode starts with PPO updates.

    With ``latent_source`` (a fitted autoencoder model) every state also
    carries that day's standardised latent code.
    """
    env, mean, std = make_env(train, config, latent_source)
    if len(train) < config.episode_length + config.window:
        raise ValueError("training panel shorter than one episode plus the state window")
    master = rng_stream(config.seed)
    params = init_agent(env.state_dim, env.n_assets, config.hidden, config.init_log_std, master)
    opt = Adam(lr=config.lr)
    last_start = len(train) - config.episode_length
    history = []
    for it in range(config.iterations):
        starts = master.integers(config.window, last_start + 1, size=config.episodes_per_iter)
        trajs = [collect_trajectory(params, env, int(s), master) for s in starts]
        params, diag = ppo_update(params, trajs, config, master, opt)
        diag["mean_episode_reward"] = float(np.mean([np.sum(t.rewards) for t in trajs]))
        history.append(diag)
        if callback is not None:
            callback(it, diag)
    return DRLModel(params, config, mean, std, latent_source is not None, history, train.tickers)


def with_overrides(config: DRLConfig, **kw) -> DRLConfig:
    return replace(config, **kw)
