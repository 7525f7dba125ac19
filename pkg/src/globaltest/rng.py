"""Counter-based random streams keyed by (master seed, index...).

Every Monte-Carlo trial and bootstrap replicate draws from its own Philox
stream, so results do not depend on how work is scheduled across workers.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``.

    The same key tuple always yields the same bit stream.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise ValueError("seed and keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def streams(seed: int, count: int, *prefix: int) -> list[np.random.Generator]:
    """``count`` streams keyed ``(seed, *prefix, 0) ... (seed, *prefix, count-1)``."""
    return [stream(seed, *prefix, i) for i in range(count)]


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    return stream(int(rng))
