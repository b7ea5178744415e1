"""Dense linear-algebra helpers used by the optimizers and estimators."""
from __future__ import annotations

import numpy as np

from ..errors import ConstraintError, NumericError, ShapeError

PSD_FLOOR = 1e-8


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix product overflowed")
    return out


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; max-subtraction makes it shift-invariant."""
    x = np.asarray(v, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def symmetrize(s: np.ndarray) -> np.ndarray:
    return 0.5 * (s + s.T)


def nearest_psd(s, floor: float = PSD_FLOOR) -> np.ndarray:
    """Repair a symmetric matrix so every eigenvalue is at least ``floor``.

    Inputs that already satisfy the floor are returned unchanged. Otherwise the
    eigenvalues are clipped and the matrix rebuilt from the eigenbasis. The
    clip target carries a tiny rounding guard so the rebuilt matrix still
    measures >= floor after reconstruction error.
    """
    m = np.asarray(s, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"nearest_psd needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("covariance has non-finite entries")
    if m.shape[0] == 0:
        return m.copy()
    m = symmetrize(m)
    vals, vecs = np.linalg.eigh(m)
    if vals[0] >= floor:
        return m
    scale = max(float(np.max(np.abs(vals))), floor)
    guard = 64 * np.finfo(float).eps * scale * m.shape[0]
    clipped = np.maximum(vals, floor + guard)
    out = (vecs * clipped) @ vecs.T
    return symmetrize(out)


def min_eigenvalue(s: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(s, dtype=np.float64)))[0])


def project_capped_simplex(v, cap: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w : sum(w) = 1, 0 <= w_i <= cap}``.

    Finds the threshold ``tau`` solving ``sum(clip(v - tau, 0, cap)) = 1``. The
    left side is piecewise linear and non-increasing in ``tau`` with kinks at
    ``v_i`` and ``v_i - cap``, so the root is located by sorting the kinks and
    interpolating on the bracketing segment.
    """
    x = np.asarray(v, dtype=np.float64).ravel()
    n = x.size
    if n == 0:
        raise ConstraintError("cannot project an empty vector")
    if not np.all(np.isfinite(x)):
        raise NumericError("projection input has non-finite entries")
    if cap <= 0 or cap * n < 1.0 - 1e-12:
        raise ConstraintError(f"cap {cap} infeasible for {n} assets (need cap*n >= 1)")
    if np.all(x >= 0) and np.all(x <= cap) and abs(x.sum() - 1.0) <= 1e-12:
        return x.copy()

    kinks = np.sort(np.concatenate([x, x - cap]))
    mass = np.clip(x[None, :] - kinks[:, None], 0.0, cap).sum(axis=1)
    j = int(np.argmax(mass <= 1.0))
    if j == 0:
        tau = kinks[0]
    else:
        lo, hi = kinks[j - 1], kinks[j]
        drop = mass[j - 1] - mass[j]
        tau = hi if drop <= 0 else lo + (mass[j - 1] - 1.0) * (hi - lo) / drop
    w = np.clip(x - tau, 0.0, cap)
    # one Newton correction on the free coordinates absorbs interpolation rounding
    free = (w > 0) & (w < cap)
    if free.any():
        w[free] += (1.0 - w.sum()) / free.sum()
        w = np.clip(w, 0.0, cap)
    return w
