"""Portable seeded generator used by tree fitting and fold assignment.

The generator is SplitMix64 (Steele, Lea & Flood 2014). It is defined purely
by 64-bit integer arithmetic, so a given seed yields the same stream on every
platform and with every numpy version.

Stream::

    state <- (state + 0x9E3779B97F4A7C15) mod 2**64
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    output z ^ (z >> 31)

Child seeds::

    split(seed, index) = mix64(seed + (index + 1) * 0x9E3779B97F4A7C15 mod 2**64)

``mix64`` is a bijection, so distinct indices below 2**64 give distinct
child seeds.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def split_seed(seed: int, index: int) -> int:
    """Derive the child seed for ``index`` from ``seed``."""
    if index < 0:
        raise ValueError("index must be non-negative")
    return mix64((seed & MASK64) + (index + 1) * GOLDEN_GAMMA)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def random(self) -> float:
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def permutation(self, n: int) -> list[int]:
        # Fisher-Yates from the top
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
