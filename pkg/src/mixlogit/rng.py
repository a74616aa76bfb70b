"""Deterministic small-state random number generation.

PCG32 (XSH-RR 64/32 output function, 64-bit LCG state) exactly as in the
reference C implementation, so any language can reproduce the stream:

    state <- state * 6364136223846793005 + inc      (mod 2^64)
    output = rotate32((((state >> 18) ^ state) >> 27), state >> 59)

Seeding follows pcg32_srandom_r: state starts at 0, inc = (stream << 1) | 1,
one step, add the seed, one step. Derived draws consume a fixed number of
raw outputs each:

    uniform():  two 32-bit outputs -> one double in [0, 1) with 53 random
                mantissa bits, ((hi << 32 | lo) >> 11) * 2^-53
    normal():   two uniforms through the Box-Muller transform; the second
                variate of the pair is discarded so every call costs
                exactly four raw outputs.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
_MULT = 6364136223846793005


class PCG32:
    """pcg32 generator; ``stream`` selects one of 2^63 independent sequences."""

    __slots__ = ("state", "inc")

    def __init__(self, seed: int, stream: int = 0):
        if not (0 <= seed <= _MASK64):
            raise ValueError(f"seed must be a u64, got {seed}")
        if not (0 <= stream <= _MASK64):
            raise ValueError(f"stream must be a u64, got {stream}")
        self.state = 0
        self.inc = ((stream << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + seed) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def uniform(self) -> float:
        """Double in [0, 1) with 53 random bits."""
        hi = self.next_u32()
        lo = self.next_u32()
        return (((hi << 32) | lo) >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two uniforms."""
        u1 = 1.0 - self.uniform()  # (0, 1], keeps the log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2)

    def randint_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection (pcg32_boundedrand_r)."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        threshold = (1 << 32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint_below(i + 1)
            items[i], items[j] = items[j], items[i]


def splitmix64(x: int) -> int:
    """One splitmix64 step; used to hash structured data into seeds."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_tokens(seed: int, tokens) -> int:
    """Stable u64 hash of an integer sequence, keyed by seed."""
    h = splitmix64(seed & _MASK64)
    for t in tokens:
        h = splitmix64(h ^ ((int(t) + 1) & _MASK64))
    return h
