"""Named, seeded random streams.

Every stochastic draw in the package goes through :func:`stream`, keyed by a
base seed plus any number of labels.  Replaying the same keys replays the same
draws, independently of call order or process layout.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_int(key) -> int:
    digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys) -> int:
    return int(stream(seed, *keys).integers(0, 2**63 - 1))
