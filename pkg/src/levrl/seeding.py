"""Deterministic RNG substreams.

Every source of randomness in the workbench is derived from one root seed
plus a named key path, so components can be re-seeded independently and
training can resume mid-run without replaying history.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def substream(root_seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the substream identified by ``keys`` under ``root_seed``."""
    entropy = [int(root_seed) & 0xFFFFFFFF] + [_key_part(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
