"""Seeded randomness: a splitmix64 stream plus labelled child-seed derivation."""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit splitmix generator. The state is a single integer."""

    GOLDEN = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GOLDEN) & MASK64
        return _mix(self.state)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.randbelow(hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def choice_weighted(self, weights) -> int:
        total = float(sum(weights))
        u = self.random() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        return last


def derive_seed(seed: int, label: str) -> int:
    """Child seed for a named purpose; stable across runs and platforms."""
    h = hashlib.blake2b(f"{seed & MASK64}:{label}".encode(), digest_size=8).digest()
    return _mix(int.from_bytes(h, "little"))


def np_rng(seed: int, label: str = "") -> np.random.Generator:
    s = derive_seed(seed, label) if label else seed & MASK64
    return np.random.Generator(np.random.PCG64(s))
