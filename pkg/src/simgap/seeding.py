"""Counter-based RNG streams derived from a single run seed.

Each stream is addressed by a tuple of labels, so adding rollouts or
sequences never shifts the draws of existing streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    if part < 0:
        raise ValueError("stream labels must be non-negative")
    return int(part)


def stream(seed: int, *labels: int | str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(_label(p) for p in labels)))


def derive_seed(seed: int, *labels: int | str) -> int:
    """A child integer seed, for handing to functions that take a plain seed."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(_label(p) for p in labels)).generate_state(1)[0])
