"""Deterministic counter-based random numbers (SplitMix64).

Draw ``i`` (0-based) of a generator seeded with ``s`` is
``mix64(s + (i + 1) * GAMMA)`` modulo 2**64, where ``mix64`` is the
SplitMix64 finalizer.  Because each draw depends only on the seed and the
draw index, a block of draws is computed in one vectorized pass and the
sequence is identical on every platform.

Floats are ``(z >> 11) * 2**-53`` in [0, 1).  Child streams are derived
with :meth:`Rng.split`, which hashes a string or integer key into the seed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: str | bytes) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``data``."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream. Not thread-safe; split one per worker instead."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"

    def split(self, key: str | int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        k = fnv1a64(key) if isinstance(key, str) else mix64(int(key) + GAMMA)
        return Rng(mix64(self.seed ^ k))

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.seed + self.counter * GAMMA)

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return _mix64_array(np.uint64(self.seed) + idx * np.uint64(GAMMA))

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def uniform(self, lo: float, hi: float, size=None):
        u = self.random(size)
        return lo + (hi - lo) * u

    def integers(self, lo: int, hi: int, size=None):
        """Integers in [lo, hi) via floor of a scaled uniform."""
        if hi <= lo:
            raise ValueError("empty integer range")
        u = self.random(size)
        if size is None:
            return lo + min(int(u * (hi - lo)), hi - lo - 1)
        return lo + np.minimum(np.floor(u * (hi - lo)).astype(np.int64), hi - lo - 1)

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of raw 64-bit draws; ties (p ~ n^2 / 2^64) resolve by index
        return np.argsort(self.u64(n), kind="stable")

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]
