"""Seeded counter-based random streams.

Every stochastic component draws from its own Philox substream, keyed by
a root seed plus a path of labels. Substreams are independent of the
order in which they are created, so vehicles / scenario runs / network
links can be generated in any order (or in parallel) without changing
their output.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_to_key(label) -> int:
    """Map a path element to a stable 32-bit key."""
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"negative stream label: {label}")
        return int(label) & 0xFFFFFFFF
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")
    raise TypeError(f"stream label must be int or str, got {type(label)!r}")


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, path).

    Same (seed, path) always yields an identical stream; distinct paths
    yield statistically independent streams.
    """
    keys = tuple(_label_to_key(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))
