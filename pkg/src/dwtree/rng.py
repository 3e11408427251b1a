"""Seeded, splittable random streams.

Every Monte Carlo sample in this package draws from its own xoshiro256++
stream.  Stream ``i`` under master seed ``s`` is seeded from the SplitMix64
expansion of ``(s + i * GOLDEN) mod 2**64`` — a documented, reproducible mix,
so results never depend on how samples are distributed over workers.

The same generator is implemented in compiled form in ``_kernels``; the two
are bit-identical (unit-tested), so a pure-python code path and a kernel code
path given the same (seed, stream) consume the same variate sequence.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15  # 2**64 / golden ratio, the Weyl increment

_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

# 2**-53: converts the top 53 bits of a u64 into a double in [0, 1)
_U53_INV = 1.0 / (1 << 53)


def splitmix64(z: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output)."""
    z = (z + GOLDEN) & MASK64
    x = z
    x = ((x ^ (x >> 30)) * _SM_MUL1) & MASK64
    x = ((x ^ (x >> 27)) * _SM_MUL2) & MASK64
    return z, x ^ (x >> 31)


def derive_stream_state(master_seed: int, stream: int) -> tuple[int, int, int, int]:
    """Initial xoshiro256++ state for a (master seed, stream index) pair."""
    z = (master_seed + (stream * GOLDEN)) & MASK64
    out = []
    for _ in range(4):
        z, x = splitmix64(z)
        out.append(x)
    if out[0] == 0 and out[1] == 0 and out[2] == 0 and out[3] == 0:
        out[0] = GOLDEN  # the all-zero state is absorbing; cannot occur from splitmix
    return tuple(out)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256PP:
    """xoshiro256++ generator (Blackman & Vigna), 64-bit output."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, master_seed: int, stream: int = 0):
        self.s0, self.s1, self.s2, self.s3 = derive_stream_state(master_seed, stream)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _U53_INV

    def exponential(self, rate: float = 1.0) -> float:
        """Exp(rate) variate via inversion; -log1p(-u) never sees log(0)."""
        return -math.log1p(-self.random()) / rate

    def state(self) -> tuple[int, int, int, int]:
        return (self.s0, self.s1, self.s2, self.s3)
