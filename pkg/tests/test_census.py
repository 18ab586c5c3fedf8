from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatcyl.census import (
    CyclicWord,
    IdentityClassError,
    canonical_form,
    class_count,
    classes_array,
    enumerate_classes,
    is_canonical,
    is_cyclically_reduced,
    is_primitive,
    shard_letters,
)
from flatcyl.group import Word, parse_word, reduce_word


def cw(text):
    return canonical_form(parse_word(text))


def test_canonical_examples():
    assert cw("b a") == cw("a b")
    assert str(cw("b a")) == "a b"
    assert str(cw("a b a'")) == "b"
    with pytest.raises(IdentityClassError):
        canonical_form(parse_word("a b b' a'"))
    with pytest.raises(IdentityClassError):
        canonical_form(())


def test_conjugates_share_canonical_form():
    rng = np.random.default_rng(0)
    w = Word(parse_word("a b a b' a' b'"))
    base = canonical_form(w)
    for _ in range(200):
        g = reduce_word(rng.integers(0, 4, size=int(rng.integers(0, 9))).tolist())
        assert canonical_form(g * w * g.inverse()) == base


def test_primitive_examples():
    assert is_primitive(cw("a b"))
    assert not is_primitive(cw("a b a b"))


def _proper_power_oracle(t):
    n = len(t)
    return any(n % p == 0 and t == t[:p] * (n // p) for p in range(1, n))


def _brute_classes(k, n):
    """Group all cyclically reduced words of length n by rotation orbit."""
    seen = set()
    for t in product(range(2 * k), repeat=n):
        if not is_cyclically_reduced(t):
            continue
        seen.add(min(t[i:] + t[:i] for i in range(n)))
    return seen


@pytest.mark.parametrize("k, L", [(2, 6), (3, 4)])
def test_enumeration_matches_brute_force(k, L):
    for n in range(1, L + 1):
        brute = _brute_classes(k, n)
        got = [c.codes for c in enumerate_classes(k, n) if c.length == n]
        assert set(got) == brute and len(got) == len(brute)
        prim = {c.codes for c in enumerate_classes(k, n, primitive_only=True) if c.length == n}
        assert prim == {t for t in brute if not _proper_power_oracle(t)}
        assert {t for t in brute if is_primitive(CyclicWord(t))} == prim


def test_small_counts():
    per_len = lambda n, p: sum(1 for c in enumerate_classes(2, n, p) if c.length == n)
    assert [per_len(1, False), per_len(1, True)] == [4, 4]
    assert [per_len(2, False), per_len(2, True)] == [8, 4]
    assert [per_len(3, False), per_len(3, True)] == [12, 8]
    assert class_count(2, 1) == 4
    assert class_count(2, 2) == 12
    assert class_count(2, 3, primitive_only=True) == 16


def test_stream_invariants_and_order():
    stream = [c.codes for c in enumerate_classes(2, 10, primitive_only=True)]
    assert len(set(stream)) == len(stream)
    assert all(is_canonical(t) for t in stream)
    assert stream == sorted(stream, key=lambda t: (len(t), t))
    present = set(stream)
    for t in stream[:2000]:
        assert CyclicWord(t).inverse().codes in present


@pytest.mark.parametrize("shards", [1, 2, 3, 4])
def test_sharding_partitions_stream(shards):
    full = [c.codes for c in enumerate_classes(2, 8)]
    parts = [
        [c.codes for c in enumerate_classes(2, 8, first_letters=shard_letters(2, s, shards))]
        for s in range(shards)
    ]
    joined = [t for p in parts for t in p]
    assert sorted(joined) == sorted(full) and len(joined) == len(full)


def test_classes_array_matches_stream():
    arr = classes_array(3, 5)
    stream = [c.codes for c in enumerate_classes(3, 5, primitive_only=True) if c.length == 5]
    assert [tuple(int(x) for x in r) for r in arr] == stream


@given(st.lists(st.integers(0, 5), min_size=1, max_size=14))
def test_canonical_form_predicates(codes):
    w = reduce_word(codes)
    try:
        c = canonical_form(w)
    except IdentityClassError:
        assert len(w) == 0
        return
    assert is_canonical(c.codes)
    assert canonical_form(c.codes) == c
