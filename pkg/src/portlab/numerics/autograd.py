"""A minimal reverse-mode autodiff over numpy arrays.

Operations performed inside a :class:`GradientTape` context on tracked
tensors are appended to the tape in execution order; ``tape.gradient``
replays them backwards applying each primitive's vector-Jacobian product.
Only what the package's small networks need is provided: matmul (batched),
elementwise arithmetic with numpy broadcasting, tanh/relu/exp/log/power,
reductions, reshapes, slicing, concatenation, softmax, clip and minimum.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import NumericError, ShapeError

_ACTIVE: list["GradientTape"] = []


class Tensor:
    __slots__ = ("data", "tracked", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, data, tracked: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.tracked = tracked

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


class GradientTape:
    """Records primitive operations on tracked tensors.

    >>> with GradientTape() as tape:
    ...     x = tape.watch(np.array(3.0))
    ...     y = x * x
    >>> tape.gradient(y, [x])[0]
    array(6.)
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def watch(self, value) -> Tensor:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.tracked = True
        return t

    def gradient(self, target: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, inputs, backward in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = []
        for s in sources:
            g = grads.get(id(s))
            result.append(np.zeros_like(s.data) if g is None else np.asarray(g, dtype=np.float64))
        return result


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    tracked = any(i.tracked for i in inputs)
    out = Tensor(data, tracked)
    if tracked and _ACTIVE:
        for tape in _ACTIVE:
            tape.entries.append((out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("autograd matmul needs operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    out = a.data ** p
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = _wrap(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.data for t in ts], axis=axis), ts,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _record(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _wrap(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    pick_a = a.data <= b.data
    return _record(np.minimum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def layer_norm(x: Tensor, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc / sqrt(var + eps) * gain + bias


def value_and_grad(fn: Callable[[dict], Tensor], params: Mapping[str, np.ndarray]):
    """Evaluate ``fn`` on tracked copies of ``params``; return (loss, grads)."""
    with GradientTape() as tape:
        tensors = {k: tape.watch(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
        loss = fn(tensors)
    names = list(tensors)
    grads = tape.gradient(loss, [tensors[k] for k in names])
    return float(loss.data), dict(zip(names, grads))


def constants(params: Mapping[str, np.ndarray]) -> dict:
    """Wrap arrays as untracked tensors for inference passes."""
    return {k: Tensor(v) for k, v in params.items()}


def grad_check(fn: Callable, params, eps: float = 1e-6) -> float:
    """Max relative error between taped and central-difference gradients.

    ``params`` is either one array or a mapping of named arrays; ``fn``
    receives the same structure wrapped as tensors and returns a scalar
    tensor. The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    single = not isinstance(params, Mapping)
    named = {"x": np.array(params, dtype=np.float64)} if single else {
        k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def call(tensors):
        return fn(tensors["x"]) if single else fn(tensors)

    _, analytic = value_and_grad(call, named)
    worst = 0.0
    for name, value in named.items():
        g = analytic[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite analytic gradient for {name}")
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(call(constants(named)).data)
            flat[i] = orig - eps
            down = float(call(constants(named)).data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite numeric gradient for {name}[{i}]")
            err = abs(g.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
