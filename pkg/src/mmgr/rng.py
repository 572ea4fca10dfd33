"""Deterministic xorshift64* generator used for train/test splits and the
edge-agent simulator.

The exact recipe is part of the reproducibility contract and is documented
in docs/formats.md: shifts 12/25/27, multiplier 0x2545F4914F6CDD1D, zero
seeds replaced by 0x9E3779B97F4A7C15.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
MULTIPLIER = 0x2545F4914F6CDD1D
ZERO_SEED_REPLACEMENT = 0x9E3779B97F4A7C15


class Xorshift64Star:
    def __init__(self, seed: int):
        state = seed & MASK64
        self._state = state if state != 0 else ZERO_SEED_REPLACEMENT

    def next_uint64(self) -> int:
        x = self._state
        x ^= (x >> 12)
        x ^= (x << 25) & MASK64
        x ^= (x >> 27)
        self._state = x
        return (x * MULTIPLIER) & MASK64

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random mantissa bits."""
        return (self.next_uint64() >> 11) * (2.0 ** -53)

    def next_below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_uint64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, descending index, j = next_uint64() % (i+1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes two uniforms, cosine branch only."""
        u1 = 1.0 - self.next_float()
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def split_rows(n: int, train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Shuffle row indices with the seeded generator; first ceil(f*n) rows train.

    The shuffled order itself is part of the contract (training assembles the
    design matrix in this order).
    """
    if not (0.0 < train_fraction <= 1.0):
        raise ValueError("train_fraction must be in (0, 1]")
    order = list(range(n))
    Xorshift64Star(seed).shuffle(order)
    n_train = math.ceil(train_fraction * n)
    return order[:n_train], order[n_train:]
