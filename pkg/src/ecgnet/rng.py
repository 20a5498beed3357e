"""Seed handling.

All randomness in the package flows through named streams derived from a
single user seed. Derivation uses SplitMix64 (Steele et al.'s 64-bit mixing
function): the seed and each stream key are folded into a 64-bit state one at
a time, and the mixed output seeds a ``numpy.random.Generator`` (PCG64).
String keys are hashed with BLAKE2b so stream identity depends on the name,
not on creation order; removing one consumer never perturbs another.

Reproducibility contract: identical (seed, key...) always yields an identical
stream on a given platform and numpy version. Bit parity across numpy
versions is not promised.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One SplitMix64 step: advance and mix a 64-bit state."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


def mix(seed: int, *keys) -> int:
    """Fold a seed and stream keys into one 64-bit value."""
    state = splitmix64(int(seed) & _MASK)
    for key in keys:
        state = splitmix64(state ^ _key_to_int(key))
    return state


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent PCG64 generator for the named stream."""
    return np.random.Generator(np.random.PCG64(mix(seed, *keys)))
