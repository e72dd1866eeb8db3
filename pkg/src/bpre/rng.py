"""Deterministic stream splitting for parallel replicas.

Every replica (and every independent role inside a replica) gets its own
counter-based Philox stream derived from the master seed and an integer key
tuple via ``SeedSequence(entropy=master_seed, spawn_key=key)``.  The mapping
depends only on the key, never on scheduling, so results are identical for
any worker count.
"""

from __future__ import annotations

import numpy as np

# role tags keep (seed, key...) collisions impossible across subsystems
ROLE_ENV = 1
ROLE_MINUS = 2
ROLE_PLUS = 3
ROLE_RENEWAL = 4
ROLE_PERMUTE = 5
ROLE_MISC = 6


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for ``key`` under ``master_seed``."""
    if master_seed < 0:
        raise ValueError("master seed must be a nonnegative integer")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
