"""Cascade reconciliation.

Bob holds the noisy key and drives the protocol; Alice only answers parity
queries.  A query is ``(round, lo, hi)``: the parity of Alice's key over
positions ``perm_round[lo:hi]``.  Every distinct range answered counts one
disclosed bit; parities implied by already disclosed ones are derived locally
and cost nothing.

Binary searches run in lockstep so that one oracle exchange serves every
open search.  After each batch Bob rescans the blocks of all rounds played so
far and searches every block whose parity still disagrees with Alice's,
which is where backtracking happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .prng import derive_seeds, permutation

MAX_PASSES = 64

ParityOracle = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CascadeConfig:
    """``growth`` multiplies the block length from one round to the next.

    The default keeps the block length fixed and relies on fresh shuffles.
    With only three rounds this corrects far more frames than doubling for a
    similar number of disclosed bits; 0.5 gives the halving schedule.
    """

    K: float = 0.73
    rounds: int = 3
    frame_bits: int = 1 << 20
    shuffle_seeds: tuple = ()
    master_seed: int = 0
    growth: float = 1.0
    shuffle_first_round: bool = True
    max_rounds: int = 3

    def __post_init__(self):
        if not 0 < self.K <= 1:
            raise ValueError("K must lie in (0, 1]")
        if not 1 <= self.rounds <= self.max_rounds:
            raise ValueError(f"rounds must lie in [1, {self.max_rounds}]")
        if self.frame_bits < 64:
            raise ValueError("frame_bits must be at least 64")
        if self.growth <= 0:
            raise ValueError("growth must be positive")
        if self.shuffle_seeds and len(self.shuffle_seeds) < self.rounds:
            raise ValueError("need one shuffle seed per round")

    def seeds(self) -> list[int]:
        if self.shuffle_seeds:
            return [int(s) for s in self.shuffle_seeds[: self.rounds]]
        return derive_seeds(self.master_seed, self.rounds)


@dataclass
class ReconciliationResult:
    corrected_key: np.ndarray
    disclosed_bits: int
    rounds_executed: int
    residual_error_estimate: int  # parity mismatches left unresolved (0 normally)
    flips: int = 0
    parity_messages: int = 0
    block_lengths: list = field(default_factory=list)


def initial_block_len(E: float, K: float = 0.73, frame_bits: int = 1 << 20) -> int:
    """``ceil(K/E)`` clamped to ``[2, frame_bits]``; ``E <= 0`` uses ``1/frame_bits``."""
    if E <= 0:
        E = 1.0 / frame_bits
    if E >= 0.5:
        return 2
    return int(min(max(math.ceil(K / E - 1e-12), 2), frame_bits))


def block_lengths(E: float, config: CascadeConfig, n: int) -> list[int]:
    k = initial_block_len(E, config.K, config.frame_bits)
    out = []
    for _ in range(config.rounds):
        out.append(int(min(max(k, 2), max(n, 2))))
        k = math.ceil(k * config.growth)
    return out


def shuffle(key: np.ndarray, seed: int, round_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Returns (shuffled key, permutation); ``shuffled = key[perm]``."""
    perm = permutation(len(key), seed, round_index)
    return np.asarray(key)[perm], perm


def unshuffle(shuffled: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.empty_like(shuffled)
    out[perm] = shuffled
    return out


def round_permutations(n: int, config: CascadeConfig) -> list[np.ndarray]:
    perms = []
    for r, seed in enumerate(config.seeds()):
        if r == 0 and not config.shuffle_first_round:
            perms.append(np.arange(n, dtype=np.int64))
        else:
            perms.append(permutation(n, seed, r))
    return perms


class AliceParityServer:
    """Answers ``(round, lo, hi)`` parity queries from prefix sums of the shuffled key."""

    def __init__(self, key: np.ndarray, config: CascadeConfig, perms: Sequence[np.ndarray] | None = None):
        key = np.asarray(key, dtype=np.uint8)
        self.perms = list(perms) if perms is not None else round_permutations(len(key), config)
        self._prefix = [np.concatenate(([0], np.cumsum(key[p], dtype=np.int64))) for p in self.perms]
        self.n = len(key)

    def __call__(self, queries: np.ndarray) -> np.ndarray:
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0, dtype=np.uint8)
        if (q[:, 0] < 0).any() or (q[:, 0] >= len(self.perms)).any():
            raise ValueError("parity query for an unknown round")
        if (q[:, 1] < 0).any() or (q[:, 2] > self.n).any() or (q[:, 1] >= q[:, 2]).any():
            raise ValueError("parity query range out of bounds")
        out = np.empty(len(q), dtype=np.uint8)
        for r in np.unique(q[:, 0]):
            sel = q[:, 0] == r
            pre = self._prefix[r]
            out[sel] = ((pre[q[sel, 2]] - pre[q[sel, 1]]) & 1).astype(np.uint8)
        return out


class _Bob:
    def __init__(self, key, perms, oracle):
        self.key = np.asarray(key, dtype=np.uint8).copy()
        self.perms = perms
        self.inv = [np.argsort(p) for p in perms]
        self.view = [self.key[p] for p in perms]
        self._prefix = [None] * len(perms)
        self.oracle = oracle
        self.known: dict[tuple[int, int, int], int] = {}
        self.disclosed = 0
        self.messages = 0
        self.flips = 0

    def prefix(self, r):
        if self._prefix[r] is None:
            self._prefix[r] = np.concatenate(([0], np.cumsum(self.view[r], dtype=np.int64)))
        return self._prefix[r]

    def bob_parity(self, r, lo, hi):
        pre = self.prefix(r)
        return int((pre[hi] - pre[lo]) & 1)

    def ask(self, ranges: list[tuple[int, int, int]]) -> None:
        """Fetch Alice's parity for every range not yet known."""
        todo = sorted({t for t in ranges if t not in self.known})
        if not todo:
            return
        ans = self.oracle(np.asarray(todo, dtype=np.int64))
        if len(ans) != len(todo):
            raise ProtocolError("parity oracle returned the wrong number of answers")
        self.messages += 1
        self.disclosed += len(todo)
        for t, a in zip(todo, ans):
            self.known[t] = int(a) & 1

    def flip(self, pos):
        self.key[pos] ^= 1
        for r in range(len(self.perms)):
            self.view[r][self.inv[r][pos]] ^= 1
            self._prefix[r] = None
        self.flips += 1

    def mismatch(self, t) -> bool:
        return self.known[t] != self.bob_parity(*t)

    def search(self, blocks: list[tuple[int, int, int]]) -> None:
        """Lockstep binary searches over blocks whose parity disagrees."""
        active = [t for t in blocks if self.mismatch(t)]
        while active:
            lefts = [(r, lo, (lo + hi) // 2) for r, lo, hi in active if hi - lo > 1]
            self.ask(lefts)
            # single-bit ranges first: compare bits directly, no prefix sums needed
            for r, lo, hi in active:
                if hi - lo == 1 and self.known[(r, lo, hi)] != self.view[r][lo]:
                    self.flip(int(self.perms[r][lo]))
            nxt = []
            for r, lo, hi in active:
                if hi - lo == 1 or not self.mismatch((r, lo, hi)):
                    continue  # done, or a flip elsewhere already fixed this range
                mid = (lo + hi) // 2
                left = (r, lo, mid)
                right = (r, mid, hi)
                self.known.setdefault(right, self.known[(r, lo, hi)] ^ self.known[left])
                nxt.append(left if self.mismatch(left) else right)
            active = nxt


class ProtocolError(RuntimeError):
    pass


def reconcile(bob_key: np.ndarray, parity_oracle: ParityOracle, E: float,
              config: CascadeConfig | None = None,
              perms: Sequence[np.ndarray] | None = None) -> ReconciliationResult:
    """Correct ``bob_key`` towards Alice's key using parity queries.

    ``parity_oracle`` maps an ``(q, 3)`` array of ``(round, lo, hi)`` to
    Alice's parities; :class:`AliceParityServer` is the local adapter.
    """
    config = config or CascadeConfig()
    n = len(bob_key)
    if n == 0:
        return ReconciliationResult(np.zeros(0, dtype=np.uint8), 0, 0, 0)
    perms = list(perms) if perms is not None else round_permutations(n, config)
    bob = _Bob(bob_key, perms, parity_oracle)
    sizes = block_lengths(E, config, n)
    blocks_by_round = []
    for r, k in enumerate(sizes):
        blocks = [(r, lo, min(lo + k, n)) for lo in range(0, n, k)]
        blocks_by_round.append(blocks)
        bob.ask(blocks)
        pending = blocks
        passes = 0
        # a lying oracle can make backtracking oscillate; the verification tag catches it
        while pending and passes < MAX_PASSES:
            passes += 1
            bob.search(pending)
            # backtracking: any block of any played round with odd parity difference
            pending = [t for rr in range(r + 1) for t in blocks_by_round[rr] if bob.mismatch(t)]
    unresolved = sum(bob.mismatch(t) for bl in blocks_by_round for t in bl)
    return ReconciliationResult(bob.key, bob.disclosed, len(sizes), unresolved, bob.flips,
                                bob.messages, sizes)


def reconcile_frames(alice_key: np.ndarray, bob_key: np.ndarray, E: float,
                     config: CascadeConfig | None = None) -> ReconciliationResult:
    """Local convenience: both keys in hand, split into frames of ``frame_bits``."""
    config = config or CascadeConfig()
    a = np.asarray(alice_key, dtype=np.uint8)
    b = np.asarray(bob_key, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("keys differ in length")
    parts, disclosed, unresolved, flips, msgs = [], 0, 0, 0, 0
    sizes: list = []
    for start in range(0, len(a), config.frame_bits):
        sl = slice(start, start + config.frame_bits)
        server = AliceParityServer(a[sl], config)
        res = reconcile(b[sl], server, E, config, perms=server.perms)
        parts.append(res.corrected_key)
        disclosed += res.disclosed_bits
        unresolved += res.residual_error_estimate
        flips += res.flips
        msgs += res.parity_messages
        sizes = res.block_lengths
    key = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)
    return ReconciliationResult(key, disclosed, config.rounds, unresolved, flips, msgs, sizes)
