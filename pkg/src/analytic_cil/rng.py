"""Named random streams derived from a single 64-bit seed.

Every consumer of randomness asks for a stream by purpose string, so adding a
new consumer never perturbs the draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Return an independent generator for ``purpose`` under ``seed``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_key(purpose),))
    return np.random.Generator(np.random.PCG64(ss))
