"""Conjugacy classes of a free group as canonical cyclic words.

Classes are enumerated directly as necklaces with the Fredricksen-Kessler-
Maiorana prenecklace recursion, pruned to the cyclically reduced language.
Every necklace's prefixes are prenecklaces and every prefix of a reduced word
is reduced, so the pruning never loses a class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .group import Word, format_word, reduce_word


class IdentityClassError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class CyclicWord:
    codes: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.codes)

    @property
    def letters(self) -> tuple[tuple[int, int], ...]:
        return Word(self.codes).letters

    def inverse(self) -> "CyclicWord":
        return canonical_form(Word(tuple(c ^ 1 for c in reversed(self.codes))))

    def __str__(self):
        return format_word(self.codes)


def is_cyclically_reduced(codes: Sequence[int]) -> bool:
    n = len(codes)
    if n == 0:
        return False
    return all(codes[i] ^ 1 != codes[(i + 1) % n] for i in range(n)) if n > 1 else True


def is_canonical(codes: Sequence[int]) -> bool:
    t = tuple(codes)
    return is_cyclically_reduced(t) and all(t <= t[i:] + t[:i] for i in range(1, len(t)))


def canonical_form(w: Word | Sequence[int]) -> CyclicWord:
    codes = list(w.codes if isinstance(w, Word) else reduce_word(w).codes)
    while len(codes) >= 2 and codes[0] ^ 1 == codes[-1]:
        codes = codes[1:-1]
    if not codes:
        raise IdentityClassError("word is conjugate to the identity")
    t = tuple(codes)
    return CyclicWord(min(t[i:] + t[:i] for i in range(len(t))))


def rotation_period(codes: Sequence[int]) -> int:
    n = len(codes)
    t = tuple(codes)
    for p in range(1, n + 1):
        if n % p == 0 and t[p:] + t[:p] == t:
            return p
    return n


def is_primitive(c: CyclicWord) -> bool:
    return rotation_period(c.codes) == c.length


def _necklaces(k: int, n: int, primitive_only: bool, first: Iterable[int] | None) -> Iterator[tuple[int, ...]]:
    top = 2 * k
    a = [0] * (n + 1)
    firsts = sorted(set(first)) if first is not None else range(top)

    def rec(t: int, p: int):
        if t > n:
            if n % p == 0 and (n == 1 or a[n] ^ 1 != a[1]) and (not primitive_only or p == n):
                yield tuple(a[1:])
            return
        prev = a[t - 1]
        start = a[t - p]
        for c in range(start, top):
            if c ^ 1 == prev:
                continue
            a[t] = c
            yield from rec(t + 1, p if c == start else t)

    for c in firsts:
        a[1] = c
        yield from rec(2, 1)


def enumerate_classes(
    k: int, L: int, primitive_only: bool = False, first_letters: Iterable[int] | None = None
) -> Iterator[CyclicWord]:
    """Every class of cyclic length <= L once, ordered by length then lexicographically.

    ``first_letters`` restricts to canonical words starting with those letter
    codes; taking a partition of range(2k) gives a partition of the stream.
    """
    if k < 2 or L < 1:
        raise ValueError("need k >= 2 and L >= 1")
    firsts = None if first_letters is None else list(first_letters)
    for n in range(1, L + 1):
        for codes in _necklaces(k, n, primitive_only, firsts):
            yield CyclicWord(codes)


def class_count(k: int, L: int, primitive_only: bool = False) -> int:
    return sum(1 for _ in enumerate_classes(k, L, primitive_only))


def shard_letters(k: int, shard: int, shards: int) -> list[int]:
    return [c for c in range(2 * k) if c % shards == shard]


def classes_array(k: int, n: int, primitive_only: bool = True, first_letters: Iterable[int] | None = None) -> np.ndarray:
    """Canonical words of length exactly n as an (N, n) int8 array, in canonical order."""
    rows = list(_necklaces(k, n, primitive_only, first_letters))
    return np.array(rows, dtype=np.int8).reshape(len(rows), n)


def reduced_words_layers(k: int, L: int) -> Iterator[np.ndarray]:
    """All reduced words of length 1..L, one (N, n) array per length."""
    layer = np.arange(2 * k, dtype=np.int8)[:, None]
    yield layer
    for _ in range(2, L + 1):
        last = layer[:, -1].astype(np.int16)
        ext = np.arange(2 * k, dtype=np.int16)[None, :]
        ok = ext != (last[:, None] ^ 1)
        rows, cols = np.nonzero(ok)
        layer = np.concatenate([layer[rows], ext[0, cols].astype(np.int8)[:, None]], axis=1)
        yield layer
