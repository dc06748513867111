"""Shuffle PRNG shared by both endpoints.

Bit-exact definition (all arithmetic modulo 2^64):

* seeding: ``state = splitmix64(seed ^ (round * 0x9E3779B97F4A7C15))``;
  a zero state is replaced by ``0x9E3779B97F4A7C15``.
* step (xorshift64*): ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
  state = x; output = x * 0x2545F4914F6CDD1D``.
* permutation: start from the identity ``p[0..n-1]``; for ``i = n-1`` down
  to ``1`` draw ``j = next() % (i + 1)`` and swap ``p[i], p[j]``.  The
  shuffled key is ``key[p]``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
XS_MULT = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int, stream: int = 0):
        s = splitmix64((seed ^ (stream * GOLDEN)) & MASK64)
        self.state = s or GOLDEN

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * XS_MULT) & MASK64


def permutation(n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Fisher-Yates permutation of ``range(n)`` driven by xorshift64*."""
    gen = XorShift64Star(seed, stream)
    p = list(range(n))
    nxt = gen.next
    for i in range(n - 1, 0, -1):
        j = nxt() % (i + 1)
        p[i], p[j] = p[j], p[i]
    return np.asarray(p, dtype=np.int64)


def derive_seeds(master: int, count: int) -> list[int]:
    """Per-round seeds from one master seed."""
    return [splitmix64((master + i * GOLDEN) & MASK64) for i in range(count)]
