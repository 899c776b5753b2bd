"""Deterministic seed derivation shared by every trainer implementation.

All randomness that must reproduce bit-for-bit across processes (and across
the reference sidecar implementations in other languages) is derived from the
two integer mixers below, never from Python's salted ``hash``.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# seeds that travel inside JSON must survive an IEEE-double round trip
JSON_SAFE_MASK = (1 << 53) - 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche mix on 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive_seed(base: int, *parts: int | str) -> int:
    """Fold integer or string parts into a base seed, one mix round per part.

    String parts are hashed via FNV-1a over their UTF-8 bytes so the result
    does not depend on any interpreter-specific hashing.
    """
    h = mix64(base & MASK64)
    for part in parts:
        if isinstance(part, str):
            p = fnv1a64(part.encode("utf-8"))
        else:
            p = (part & MASK64) * GOLDEN & MASK64
        h = mix64(h ^ p)
    return h
