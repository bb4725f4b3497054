"""Seedable xorshift128+ generator (seeded through splitmix64).

Used for weight initialization so the same seed gives the same weights on
every backend and platform.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class XorShift128Plus:
    def __init__(self, seed: int = 0):
        state = int(seed) & _MASK
        state, self._s0 = splitmix64(state)
        state, self._s1 = splitmix64(state)
        if self._s0 == 0 and self._s1 == 0:  # all-zero state is a fixed point
            self._s1 = 1

    def next_u64(self) -> int:
        s1, s0 = self._s0, self._s1
        result = (s0 + s1) & _MASK
        self._s0 = s0
        s1 ^= (s1 << 23) & _MASK
        self._s1 = s1 ^ s0 ^ (s1 >> 17) ^ (s0 >> 26)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        return np.array([low + (high - low) * self.random() for _ in range(size)], np.float64)
