"""Toeplitz-hash privacy amplification.

Matrix layout (seed ``t_1 .. t_{m+n-1}``): row 1 is ``t_m .. t_{m+n-1}``,
each following row is shifted right by one, the last row is ``t_1 .. t_n``;
so ``T[i, j] = t_{m + j - i}`` (1-based).  ``B = T D mod 2``.

The fast path computes the same product as a cyclic correlation of length
``L`` (next power of two >= m+n-1) with a number-theoretic transform modulo
998244353.  Every correlation value is at most ``n``, well below the modulus,
so the integer result is exact before the final reduction mod 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NTT_PRIME = 998244353  # 119 * 2^23 + 1
NTT_ROOT = 3
NTT_MAX_LOG = 23


@dataclass(frozen=True)
class ToeplitzSpec:
    n: int
    m: int
    seed_bits: np.ndarray

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        seed = np.asarray(self.seed_bits, dtype=np.uint8)
        if seed.ndim != 1 or len(seed) != self.m + self.n - 1:
            raise ValueError(f"seed must have m+n-1={self.m + self.n - 1} bits, got {len(seed)}")
        if (seed > 1).any():
            raise ValueError("seed entries must be bits")
        object.__setattr__(self, "seed_bits", seed)

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "ToeplitzSpec":
        return cls(n, m, rng.integers(0, 2, m + n - 1, dtype=np.uint8))


def _check_key(spec: ToeplitzSpec, key) -> np.ndarray:
    d = np.asarray(key, dtype=np.uint8)
    if d.shape != (spec.n,):
        raise ValueError(f"key must have n={spec.n} bits, got shape {d.shape}")
    return d


def toeplitz_matrix(spec: ToeplitzSpec) -> np.ndarray:
    i = np.arange(spec.m)[:, None]
    j = np.arange(spec.n)[None, :]
    return spec.seed_bits[spec.m - 1 + j - i]


def toeplitz_direct(spec: ToeplitzSpec, key) -> np.ndarray:
    """Reference implementation: explicit row-by-row dot products over GF(2)."""
    d = _check_key(spec, key).astype(np.int64)
    s = spec.seed_bits.astype(np.int64)
    out = np.empty(spec.m, dtype=np.uint8)
    for i in range(spec.m):
        row = s[spec.m - 1 - i: spec.m - 1 - i + spec.n]
        out[i] = int(row @ d) & 1
    return out


_twiddle_cache: dict[tuple[int, bool], np.ndarray] = {}


def _twiddles(L: int, invert: bool) -> np.ndarray:
    """Powers w^k, k < L/2, of a primitive L-th root of unity (or its inverse)."""
    key = (L, invert)
    if key not in _twiddle_cache:
        p = NTT_PRIME
        w = pow(NTT_ROOT, (p - 1) // L, p)
        if invert:
            w = pow(w, p - 2, p)
        half = max(L // 2, 1)
        tw = np.ones(half, dtype=np.uint64)
        filled, step = 1, w
        while filled < half:
            take = min(filled, half - filled)
            tw[filled: filled + take] = tw[:take] * np.uint64(step) % np.uint64(p)
            filled += take
            step = step * step % p
        _twiddle_cache[key] = tw
    return _twiddle_cache[key]


def _bitrev(L: int) -> np.ndarray:
    bits = L.bit_length() - 1
    idx = np.arange(L, dtype=np.int64)
    rev = np.zeros(L, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def ntt(a: np.ndarray, invert: bool = False) -> np.ndarray:
    """Radix-2 transform over GF(998244353); ``len(a)`` must be a power of two."""
    L = len(a)
    if L & (L - 1) or L > 1 << NTT_MAX_LOG:
        raise ValueError(f"transform length {L} is not a power of two <= 2^{NTT_MAX_LOG}")
    p = np.uint64(NTT_PRIME)
    a = np.asarray(a, dtype=np.uint64)[_bitrev(L)] % p
    tw_all = _twiddles(L, invert)
    h = 1
    while h < L:
        tw = tw_all[:: L // (2 * h)][:h]
        blk = a.reshape(-1, 2 * h)
        u = blk[:, :h]
        v = blk[:, h:] * tw % p
        a = np.concatenate(((u + v) % p, (u + p - v) % p), axis=1).ravel()
        h *= 2
    if invert:
        a = a * np.uint64(pow(L, NTT_PRIME - 2, NTT_PRIME)) % p
    return a


def cyclic_convolution(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact cyclic convolution of two non-negative integer vectors (result < prime)."""
    fx, fy = ntt(x), ntt(y)
    return ntt(fx * fy % np.uint64(NTT_PRIME), invert=True)


def toeplitz_fft(spec: ToeplitzSpec, key) -> np.ndarray:
    """Same product as :func:`toeplitz_direct` through one exact cyclic correlation."""
    d = _check_key(spec, key)
    m, n = spec.m, spec.n
    L = 1 << max(0, (m + n - 2).bit_length())
    s = np.zeros(L, dtype=np.uint64)
    s[: m + n - 1] = spec.seed_bits
    # reversed key on the cycle: r[(-j) mod L] = d[j]
    r = np.zeros(L, dtype=np.uint64)
    r[(-np.arange(n)) % L] = d
    corr = cyclic_convolution(s, r)  # corr[u] = sum_j s[u + j] d[j]
    return (corr[:m][::-1] & np.uint64(1)).astype(np.uint8)


def toeplitz_hash(key, seed_bits, m: int) -> np.ndarray:
    key = np.asarray(key, dtype=np.uint8)
    return toeplitz_fft(ToeplitzSpec(len(key), m, seed_bits), key)


def pa_extract(raw_key, l: int, seed_bits) -> np.ndarray:
    """Final key of length ``l`` from the corrected key; ``l = 0`` gives an empty key."""
    raw = np.asarray(raw_key, dtype=np.uint8)
    if l < 0 or l > len(raw):
        raise ValueError(f"cannot extract {l} bits from {len(raw)}")
    if l == 0:
        return np.zeros(0, dtype=np.uint8)
    return toeplitz_fft(ToeplitzSpec(len(raw), l, seed_bits), raw)
