"""Deterministic random-stream derivation.

Every stochastic operation in the engine draws from a generator derived
from (seed, *keys) so that results are a pure function of their inputs
and independent substreams never collide.
"""

from __future__ import annotations

import numpy as np

_ENCODING = "utf-8"


def _key_to_ints(key) -> list[int]:
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF]
    if isinstance(key, str):
        return [b for b in key.encode(_ENCODING)]
    raise TypeError(f"unsupported substream key: {key!r}")


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the substream identified by (seed, *keys).

    Keys may be ints or short strings; the same tuple always yields the
    same stream, different tuples yield statistically independent ones.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.extend(_key_to_ints(key))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
