"""Seeded counter-based random streams.

Every stream is a Philox generator keyed by a hash of ``(seed, *labels)``, so
shot ``i`` draws the same numbers no matter how many shots run or in which
order workers process them.
"""

from __future__ import annotations

import numpy as np


def _key(seed: int, *labels: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(v) for v in labels))
    return ss.generate_state(2, dtype=np.uint64)


def stream(seed: int, *labels: int) -> np.random.Generator:
    """Independent generator for the work item named by ``labels``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, *labels)))


def uniforms(seed: int, n: int, *labels: int) -> np.ndarray:
    """First ``n`` uniforms of a stream; a prefix of any longer draw."""
    return stream(seed, *labels).random(n)
