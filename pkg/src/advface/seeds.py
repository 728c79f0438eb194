"""Deterministic seed derivation (splitmix64-style) for all toolkit randomness."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def derive_seed(seed: int, *parts: int) -> int:
    """Mix a parent seed with integer context parts into a 64-bit child seed."""
    state = _splitmix64(seed & _MASK)
    for p in parts:
        state = _splitmix64(state ^ (int(p) & _MASK))
    return state


def rng_from(seed: int, *parts: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *parts)))
