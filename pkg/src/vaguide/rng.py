"""splitmix64 PRNG: sequential draws for phantom parameters and a
counter-based variant for speckle noise, fixed bit-for-bit so generated
data is reproducible across platforms."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * (self.next_u64() / 2.0**64)

    def uniform3(self, lo, hi) -> np.ndarray:
        return np.array([self.uniform(l, h) for l, h in zip(lo, hi)])


def counter_hash_u64(key: int, counters: np.ndarray) -> np.ndarray:
    """Counter-based hash: splitmix64 finalizer over the mixed key/counter pair.

    Equals mix64(mix64(key) ^ mix64(counter + GAMMA)) elementwise.
    """
    c = (counters.astype(np.uint64) + np.uint64(GAMMA)) & np.uint64(MASK64)
    z = _mix64_vec(c)
    z = z ^ np.uint64(mix64(key))
    return _mix64_vec(z)


def counter_uniform_pm1(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniform values in [-1, 1) keyed by (key, counter)."""
    z = counter_hash_u64(key, counters)
    return (z / 2.0**63) - 1.0


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))
