"""Deterministic RNG stream derivation.

Every random decision in the package draws from a generator derived from an
explicit key tuple (seed plus string/int context parts), so results never
depend on call order, worker scheduling, or global state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(part) -> list[int]:
    if isinstance(part, (bool, np.bool_)):
        return [int(part)]
    if isinstance(part, (int, np.integer)):
        # SeedSequence entropy words must be non-negative.
        return [int(part) & 0xFFFFFFFF, (int(part) >> 32) & 0xFFFFFFFF]
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    raise TypeError(f"rng key parts must be int or str, got {type(part).__name__}")


def seed_sequence(*parts) -> np.random.SeedSequence:
    """Build a SeedSequence from an arbitrary (int | str) key tuple."""
    if not parts:
        raise ValueError("at least one key part is required")
    entropy: list[int] = []
    for part in parts:
        entropy.extend(_key_words(part))
    return np.random.SeedSequence(entropy)


def stream(*parts) -> np.random.Generator:
    """Return a PCG64 generator keyed by the given parts."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))
