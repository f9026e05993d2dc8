import random
from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from smdsim.maintenance import BloomFilter, CountingBloomFilter
from smdsim.maintenance.filters import hash_indices, hash_indices_many


@given(st.lists(st.integers(0, 2**40), min_size=1, max_size=50), st.integers(1, 8),
       st.integers(1, 5000), st.integers(0, 2**62))
def test_scalar_and_vector_hashing_agree(keys, k, m, seed):
    """[DERIVED]"""
    many = hash_indices_many(keys, k, m, seed)
    for row, key in zip(many, keys):
        assert list(row) == hash_indices(key, k, m, seed)


@settings(max_examples=50, deadline=None)
@given(st.sets(st.integers(0, 1 << 20), max_size=300), st.integers(0, 2**32))
def test_bloom_has_no_false_negatives(keys, seed):
    """[DERIVED]"""
    bf = BloomFilter(2048, 5, seed)
    for i, key in enumerate(sorted(keys)):
        # mix the scalar and bulk insertion paths
        if i % 2:
            bf.add(key)
        else:
            bf.add_many([key])
    assert all(key in bf for key in keys)
    assert bf.contains_many(sorted(keys)).all()


def test_bloom_false_positive_rate_near_theory():
    """[DERIVED] measured FP rate within a binomial band of (1 - e^{-kn/m})^k."""
    bf = BloomFilter(8192, 6, seed=7)
    members = np.arange(0, 2000 * 3, 3)
    bf.add_many(members)
    probes = np.arange(1, 300_001, 3)  # disjoint from members
    fp = bf.contains_many(probes).mean()
    p = bf.expected_fp_rate()
    sigma = (p * (1 - p) / probes.size) ** 0.5
    assert abs(fp - p) < 6 * sigma + 0.01 * p


def test_counting_bloom_never_undercounts():
    """[DERIVED] exact Counter oracle over 10^5 inserts with heavy collisions."""
    cbf = CountingBloomFilter(1024, 4, seed=3)
    exact = Counter()
    rng = random.Random(11)
    for _ in range(100_000):
        r = rng.randrange(5000)
        est = cbf.insert(r)
        exact[r] += 1
        assert est >= exact[r]
    assert all(cbf.estimate(r) >= c for r, c in exact.items())


def test_counting_bloom_clear_resets():
    """[TRIVIAL]"""
    cbf = CountingBloomFilter(64, 3)
    for _ in range(10):
        cbf.insert(5)
    assert cbf.estimate(5) == 10
    cbf.clear()
    assert cbf.estimate(5) == 0
    assert cbf.insert(5) == 1
