"""Seeded random streams.

Every stochastic operation draws from a numpy Generator derived from a base seed and
an index path (restart, replicate, ...), so results do not depend on how work is
scheduled across threads. Normal variates come from numpy's PCG64 / ziggurat
`standard_normal`; seeds reproduce across builds that pin numpy's major version.
"""
from typing import Optional

import numpy as np

from filematch.core.config import settings


def resolve_seed(seed: Optional[int]) -> int:
    """Returns ``seed`` or the configured default seed when it is None."""
    return settings.SEED if seed is None else int(seed)


def stream(seed: Optional[int], *keys: int) -> np.random.Generator:
    """
    Builds an independent generator for ``(seed, *keys)``.

    Args:
        seed: Base seed (None selects the configured default).
        keys: Index path identifying the task, e.g. ``(restart,)``.

    Returns:
        A PCG64 generator whose state depends only on the seed and the keys.
    """
    sequence = np.random.SeedSequence(
        resolve_seed(seed), spawn_key=tuple(int(k) for k in keys)
    )
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: Optional[int], *keys: int) -> int:
    """Returns a non-negative integer seed derived from ``(seed, *keys)``."""
    sequence = np.random.SeedSequence(
        resolve_seed(seed), spawn_key=tuple(int(k) for k in keys)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
