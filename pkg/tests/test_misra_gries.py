import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdsim.maintenance import CounterTable


def test_first_activation_installs_row_with_count_one():
    """[TRIVIAL]"""
    t = CounterTable(4)
    assert t.update(7) == 1
    assert t.count(7) == 1 and t.spillover == 0


def test_full_table_spills_then_replaces_minimum():
    """[DERIVED]"""
    t = CounterTable(2)
    t.update(1)
    t.update(2)
    # table full, min 1 > spillover 0: spill
    assert t.update(3) is None and t.spillover == 1
    # spillover now equals the minimum: replace a min entry with min+1
    assert t.update(3) == 2
    assert 3 in t and len(t) == 2


def test_size_must_be_positive():
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        CounterTable(0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(0, 30), max_size=400))
def test_estimates_bound_true_counts(size, stream):
    """[DERIVED] exact-count oracle: tracked estimates >= true count; untracked true count <= spillover;
    spillover <= n / (size + 1)."""
    t = CounterTable(size)
    exact = Counter()
    for r in stream:
        t.update(r)
        exact[r] += 1
    for r, c in exact.items():
        est = t.count(r)
        assert (est if est is not None else t.spillover) >= c
    assert t.spillover <= len(stream) // (size + 1)
    assert t.spillover <= t.min_count or t.min_count == 0 and len(t) < size


def test_count_buckets_match_naive_minimum():
    """[DERIVED]"""
    t = CounterTable(16)
    rng = random.Random(5)
    for _ in range(20_000):
        t.update(int(rng.paretovariate(1.2)) % 200)
        if len(t) == 16:
            assert t.min_count == min(t.counts.values())
