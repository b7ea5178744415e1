"""Seeded random streams.

Every stream is numpy's Philox4x64-10 counter-based generator keyed through
``SeedSequence``; both are specified bit-for-bit by numpy and independent of
platform, so equal seeds give equal draws everywhere.
"""
from __future__ import annotations

import hashlib

import numpy as np

RNG_ALGORITHM = "philox4x64-10"


def rng_stream(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(global_seed: int, name: str) -> int:
    """Per-module seed: first 8 bytes of sha256("<global_seed>:<name>")."""
    digest = hashlib.sha256(f"{int(global_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def split_streams(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Independent child streams for parallel work (e.g. episode rollouts)."""
    seeds = rng.integers(0, 2**63 - 1, size=count)
    return [rng_stream(int(s)) for s in seeds]
