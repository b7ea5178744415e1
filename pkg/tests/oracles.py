"""Independent reference implementations used only by the tests."""
import math

import numpy as np

from portlab.numerics import rng_stream


def grid_best_sharpe(mu, sigma, cap, rf=0.0, step=0.01):
    """Best Sharpe over the 3-asset simplex grid with the given step and cap."""
    k = int(round(1 / step))
    best = -math.inf
    for i in range(k + 1):
        for j in range(k + 1 - i):
            w = np.array([i, j, k - i - j]) / k
            if np.any(w > cap + 1e-12):
                continue
            var = w @ sigma @ w
            if var <= 0:
                continue
            best = max(best, (w @ mu - rf) / math.sqrt(var))
    return best


def random_mvo_instance(seed, n=3):
    rng = rng_stream(seed)
    a = rng.normal(0, 0.01, (n, n))
    sigma = a @ a.T + np.diag(rng.uniform(1e-5, 1e-4, n))
    mu = rng.normal(3e-4, 5e-4, n)
    return mu, sigma


def log_sum_cr(r):
    return math.exp(math.fsum(math.log1p(x) for x in r)) - 1.0


def two_pass_vol(r):
    m = math.fsum(r) / len(r)
    return math.sqrt(math.fsum((x - m) ** 2 for x in r) / (len(r) - 1)) * math.sqrt(252)


def brute_drawdown(values):
    worst = 0.0
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            worst = max(worst, (values[i] - values[j]) / values[i])
    return worst


def two_pass_cov(x):
    t, n = len(x), len(x[0])
    means = [math.fsum(row[j] for row in x) / t for j in range(n)]
    return [[math.fsum((row[a] - means[a]) * (row[b] - means[b]) for row in x) / (t - 1)
             for b in range(n)] for a in range(n)]


def gae_brute(rewards, values, gamma, lam, last_value=0.0):
    """Double loop over k-step TD residuals."""
    T = len(rewards)
    v = list(values) + [last_value]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    adv = []
    for t in range(T):
        adv.append(sum((gamma * lam) ** (u - t) * deltas[u] for u in range(t, T)))
    return np.array(adv)


def block_market(seed, t=1500, corr=0.9):
    """Two blocks of three assets: within-block correlation ``corr``, none across."""
    rng = rng_stream(seed)
    f = rng.standard_normal((t, 2))
    vols = np.array([0.01, 0.015, 0.012, 0.02, 0.008, 0.011])
    block = np.array([0, 0, 0, 1, 1, 1])
    z = f[:, block] * math.sqrt(corr) + math.sqrt(1 - corr) * rng.standard_normal((t, 6))
    return z * vols, block


def block_gap(sigma, block):
    """(smallest within-block, largest across-block) off-diagonal covariance."""
    n = len(block)
    within = [sigma[i, j] for i in range(n) for j in range(n) if i != j and block[i] == block[j]]
    across = [sigma[i, j] for i in range(n) for j in range(n) if block[i] != block[j]]
    return min(within), max(across)


def replay_dense(x, layers, activation):
    """Loop-based forward pass through ``[(W, b), ...]`` with ``activation`` between layers."""
    h = [list(map(float, row)) for row in np.atleast_2d(x)]
    for li, (w, b) in enumerate(layers):
        out = []
        for row in h:
            v = [math.fsum(row[i] * w[i, j] for i in range(len(row))) + b[j] for j in range(w.shape[1])]
            if li < len(layers) - 1:
                v = [activation(a) for a in v]
            out.append(v)
        h = out
    return np.array(h)
