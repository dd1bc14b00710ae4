"""Per-sample seed derivation.

Every randomized quantity is keyed by an explicit integer seed plus a tuple of
stream/sample indices, so serial and reordered evaluation agree bit for bit.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator seeded by hashing ``(seed, *keys)`` through SeedSequence."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError(f"seed and keys must be non-negative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))


# Stream identifiers, kept distinct so that e.g. anchor and candidate draws for
# the same image never share a random stream.
STREAM_ANCHOR = 1
STREAM_CANDIDATE = 2
STREAM_DATASET = 3
STREAM_TRAIN = 4
STREAM_PROBE = 5
STREAM_RISK = 6
STREAM_WORLD = 7
STREAM_INIT = 8
