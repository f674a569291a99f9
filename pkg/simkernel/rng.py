"""SplitMix64: a tiny, platform-independent PRNG.

All simulated randomness (workload sampling, fault injection) derives from
instances of this generator, so a seed reproduces a run bit for bit.
"""

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randrange bound must be > 0, got {n}")
        # rejection sampling keeps the result unbiased
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def expovariate(self, rate: float) -> float:
        return -math.log(1.0 - self.random()) / rate

    def spawn(self, tag: int) -> "SplitMix64":
        """Independent child stream; the parent's sequence is not consumed."""
        return SplitMix64(derive_seed(self._state, tag))


def derive_seed(seed: int, tag: int) -> int:
    return SplitMix64((seed ^ (tag * _GOLDEN)) & _MASK64).next_u64()
