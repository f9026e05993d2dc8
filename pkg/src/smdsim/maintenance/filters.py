"""Seeded Bloom and counting Bloom filters over integer row ids.

Hashing is 64-bit splitmix-style mixing with double hashing
(``h1 + i*h2 mod m``). The scalar and vectorized paths produce identical
indices, so a filter can be filled one key at a time and queried in bulk.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * _C1) & _MASK
    x = ((x ^ (x >> 27)) * _C2) & _MASK
    return x ^ (x >> 31)


def _mix64_np(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_C1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_C2)
    return x ^ (x >> np.uint64(31))


def hash_indices(key: int, k: int, m: int, seed: int) -> list[int]:
    h1 = mix64((key ^ seed) & _MASK)
    h2 = mix64(h1 ^ mix64(seed)) | 1
    return [((h1 + i * h2) & _MASK) % m for i in range(k)]


def hash_indices_many(keys, k: int, m: int, seed: int) -> np.ndarray:
    """(len(keys), k) array of filter positions; matches :func:`hash_indices`."""
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h1 = _mix64_np(keys ^ np.uint64(seed & _MASK))
        h2 = _mix64_np(h1 ^ np.uint64(mix64(seed))) | np.uint64(1)
        i = np.arange(k, dtype=np.uint64)
        pos = h1[:, None] + i[None, :] * h2[:, None]
    return (pos % np.uint64(m)).astype(np.int64)


class BloomFilter:
    """Fixed-size Bloom filter (no false negatives by construction)."""

    def __init__(self, m: int = 8192, k: int = 6, seed: int = 0):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        self.m = m
        self.k = k
        self.seed = seed
        self.bits = np.zeros(m, dtype=bool)
        self.count = 0

    def add(self, key: int) -> None:
        for i in hash_indices(key, self.k, self.m, self.seed):
            self.bits[i] = True
        self.count += 1

    def add_many(self, keys) -> None:
        keys = np.asarray(keys)
        if keys.size:
            self.bits[hash_indices_many(keys, self.k, self.m, self.seed).ravel()] = True
            self.count += keys.size

    def __contains__(self, key: int) -> bool:
        bits = self.bits
        return all(bits[i] for i in hash_indices(key, self.k, self.m, self.seed))

    def test(self, key: int) -> bool:
        return key in self

    def contains_many(self, keys) -> np.ndarray:
        keys = np.asarray(keys)
        if not keys.size:
            return np.zeros(0, dtype=bool)
        return self.bits[hash_indices_many(keys, self.k, self.m, self.seed)].all(axis=1)

    def expected_fp_rate(self) -> float:
        return (1.0 - math.exp(-self.k * self.count / self.m)) ** self.k


class CountingBloomFilter:
    """Counting Bloom filter whose estimate never undercounts an insertion count."""

    def __init__(self, m: int = 1024, k: int = 4, seed: int = 0):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        self.m = m
        self.k = k
        self.seed = seed
        self.counters = [0] * m

    def insert(self, key: int) -> int:
        """Insert ``key`` and return its new estimate."""
        c = self.counters
        est = None
        for i in hash_indices(key, self.k, self.m, self.seed):
            v = c[i] + 1
            c[i] = v
            if est is None or v < est:
                est = v
        return est

    def estimate(self, key: int) -> int:
        c = self.counters
        return min(c[i] for i in hash_indices(key, self.k, self.m, self.seed))

    def clear(self) -> None:
        self.counters = [0] * self.m
