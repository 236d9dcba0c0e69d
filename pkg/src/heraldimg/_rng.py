"""Seed derivation. Every random stream is keyed by (master seed, purpose, index)."""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``keys`` under the master ``seed``.

    Streams for different keys are statistically independent and do not depend
    on the order in which they are requested, so serial and parallel loops agree.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)
