"""Shared pieces for the small networks: initialisation, dense stacks, param files."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..numerics import autograd as ag

CONTAINER_FORMAT = "portlab-params/1"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def dense_stack(rng, sizes, prefix: str) -> dict:
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.{i}.W"] = glorot(rng, a, b)
        params[f"{prefix}.{i}.b"] = np.zeros(b)
    return params


def run_stack(params, x, prefix: str, n_layers: int, activation: str = "tanh"):
    """Affine layers with ``activation`` between them; the last layer is linear."""
    h = x
    for i in range(n_layers):
        h = h @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        if i < n_layers - 1:
            if activation == "tanh":
                h = ag.tanh(h)
            elif activation == "relu":
                h = ag.relu(h)
            elif activation != "linear":
                raise ValueError(f"unknown activation {activation!r}")
    return h


def as_tensor(x):
    return x if isinstance(x, ag.Tensor) else ag.Tensor(x)


def copy_params(params: dict) -> dict:
    return {k: np.array(v, dtype=np.float64) for k, v in params.items()}


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"shape": list(value.shape), "values": [float(x) for x in value.reshape(-1)]}
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _decode_array(entry) -> np.ndarray:
    return np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])


def save_container(path, model: str, header: dict, params: dict, extra: dict | None = None) -> None:
    """Write a JSON parameter container.

    Layout::

        {"format": "portlab-params/1", "model": <name>, "header": {<sizes/config>},
         "params": {<name>: {"shape": [...], "values": [...]}}, "extra": {...}}

    Keys are sorted and floats use shortest round-trip repr, so equal
    parameters always produce identical bytes.
    """
    doc = {"format": CONTAINER_FORMAT, "model": model, "header": _encode(header),
           "params": {k: _encode(np.asarray(v)) for k, v in params.items()},
           "extra": _encode(extra or {})}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_container(path, model: str | None = None) -> tuple[dict, dict, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CONTAINER_FORMAT:
        raise DataError(f"{path}: not a parameter container")
    if model is not None and doc.get("model") != model:
        raise DataError(f"{path}: holds {doc.get('model')!r}, expected {model!r}")
    params = {k: _decode_array(v) for k, v in doc["params"].items()}
    return doc["header"], params, doc.get("extra", {})


def decode_arrays(entry):
    """Inverse of the array encoding for nested ``extra`` blocks."""
    if isinstance(entry, dict) and set(entry) == {"shape", "values"}:
        return _decode_array(entry)
    if isinstance(entry, dict):
        return {k: decode_arrays(v) for k, v in entry.items()}
    return entry


def standardize_with(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def safe_scaler(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and sample std; constant columns get std 1 so shapes survive."""
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1) if len(x) > 1 else np.ones(x.shape[1])
    std = np.where(np.isfinite(std) & (std > 0), std, 1.0)
    return mean, std
