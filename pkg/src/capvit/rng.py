"""Deterministic 64-bit PRNG used for all data-side randomness.

SplitMix64 with the standard constants: additive constant (gamma)
0x9E3779B97F4A7C15 and mixing multipliers 0xBF58476D1CE4E5B9 /
0x94D049BB133111EB. Every stream is a pure function of its seed, so
corpora, masks, and batch orders are reproducible bit-exactly.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer: scrambles a 64-bit state into an output word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(*components: int) -> int:
    """Fold components (seed, step, example index, role...) into one seed.

    Each component is absorbed with a gamma step then mixed, so streams
    keyed by different tuples are independent for practical purposes.
    """
    state = 0
    for c in components:
        state = (state + GAMMA + (int(c) & MASK64)) & MASK64
        state = mix64(state)
    return state


class SplitMix64:
    """Scalar SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the top range."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        limit = MASK64 - (MASK64 % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, items):
        return items[self.randint(len(items))]

    def weighted_choice(self, items, weights):
        """Pick items[i] with probability weights[i] / sum(weights)."""
        total = float(sum(weights))
        r = self.next_float() * total
        acc = 0.0
        for item, w in zip(items, weights):
            acc += w
            if r < acc:
                return item
        return items[-1]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct integers from [0, n), in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def u64_stream(seed: int, count: int) -> np.ndarray:
    """Vectorized SplitMix64: the first `count` outputs of the stream as uint64.

    Matches SplitMix64(seed) word-for-word; used where many draws are
    needed at once (e.g. mask sampling keys).
    """
    with np.errstate(over="ignore"):
        idx = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed) + idx * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))
