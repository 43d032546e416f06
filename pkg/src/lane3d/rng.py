"""SplitMix64 random stream.

The generator is specified exactly so that any implementation reproduces the
same scenes from the same seed:

* state advances by ``0x9E3779B97F4A7C15`` (mod 2**64) per draw and is mixed
  with the standard SplitMix64 finaliser;
* a double in [0, 1) is the top 53 bits of the output times 2**-53;
* ``uniform(a, b) = a + u * (b - a)``;
* ``integer(lo, hi) = lo + floor(u * (hi - lo + 1))`` (both ends inclusive);
* ``coin(p) = u < p``.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class RandomStream:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return splitmix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, a: float, b: float) -> float:
        x = a + self.random() * (b - a)
        # rounding can land exactly on b
        return math.nextafter(b, a) if (b > a and x >= b) else x

    def integer(self, lo: int, hi: int) -> int:
        return lo + min(int(self.random() * (hi - lo + 1)), hi - lo)

    def coin(self, p: float = 0.5) -> bool:
        return self.random() < p


def rng_new(seed: int) -> RandomStream:
    return RandomStream(seed)


def sub_seed(seed: int, attempt: int) -> int:
    """Seed used for retry ``attempt`` (attempt 0 is the seed itself)."""
    if attempt == 0:
        return seed & MASK64
    return splitmix64((seed + attempt * GOLDEN) & MASK64)
