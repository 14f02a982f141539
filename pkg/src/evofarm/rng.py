"""Keyed, counter-based random streams.

Every stochastic draw in the trainer is made from a generator keyed by a
tuple of integers and strings (master seed, purpose tag, generation, slot,
...).  Streams are therefore a pure function of their key: scheduling order,
thread count and worker placement cannot change any draw.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_u64", "keyed_generator", "MASK64"]

MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Finalizer from the splitmix64 engine; a solid 64-bit mixer.
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _fold(part: int | str) -> int:
    if isinstance(part, str):
        acc = 0xCBF29CE484222325  # FNV-1a over the tag bytes
        for b in part.encode("utf-8"):
            acc = ((acc ^ b) * 0x100000001B3) & MASK64
        return acc
    return part & MASK64


def derive_u64(*parts: int | str) -> int:
    """Deterministically hash the key parts down to a single u64."""
    state = 0x243F6A8885A308D3
    for part in parts:
        state = _splitmix64(state ^ _fold(part))
    return state


def keyed_generator(*parts: int | str) -> np.random.Generator:
    """A Philox (counter-based) generator keyed by the given parts."""
    k0 = derive_u64(*parts, "philox-k0")
    k1 = derive_u64(*parts, "philox-k1")
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))
