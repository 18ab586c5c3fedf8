"""Product groups of real SL_d and complex SL_2 factors, generator configs and words.

The group is modelled as free on its generators.  Letters are encoded as
integers: generator ``i`` is ``2*i`` and its inverse is ``2*i + 1``, so the
integer order is exactly the canonical letter order (a, a', b, b', ...) and
inversion is ``code ^ 1``.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

REAL = "real-special-linear"
COMPLEX = "complex-special-linear-2"
_KIND_ALIASES = {REAL: REAL, "real": REAL, COMPLEX: COMPLEX, "complex": COMPLEX}


class ConfigError(ValueError):
    """Schema or validation failure while reading a group configuration."""


class WordOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class FactorSpec:
    kind: str
    dimension: int = 2
    projectivized: bool = False

    def __post_init__(self):
        if self.kind not in (REAL, COMPLEX):
            raise ConfigError(f"unknown factor kind {self.kind!r}")
        if self.kind == COMPLEX and self.dimension != 2:
            raise ConfigError("complex factors must have dimension 2")
        if self.dimension < 2:
            raise ConfigError("factor dimension must be at least 2")

    @property
    def rank(self) -> int:
        return self.dimension - 1

    @property
    def is_complex(self) -> bool:
        return self.kind == COMPLEX


@dataclass(frozen=True, eq=False)
class GroupSpec:
    factors: tuple[FactorSpec, ...]
    generators: tuple[tuple[np.ndarray, ...], ...]
    tolerance: float = 1e-10
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.generators) < 2:
            raise ConfigError("need at least two generators")
        if self.rank < 1:
            raise ConfigError("total rank must be at least 1")
        for i, gen in enumerate(self.generators):
            if len(gen) != len(self.factors):
                raise ConfigError(f"generators[{i}] has {len(gen)} matrices, expected {len(self.factors)}")
            for f, (mat, fac) in enumerate(zip(gen, self.factors)):
                if mat.shape != (fac.dimension, fac.dimension):
                    raise ConfigError(f"generators[{i}][{f}] has shape {mat.shape}")
                det = np.linalg.det(mat)
                if abs(det - 1) > self.tolerance:
                    raise ConfigError(f"generators[{i}][{f}] has determinant {det:.17g}, expected 1")
        for mats in self.generators:
            for m in mats:
                m.setflags(write=False)

    @property
    def k(self) -> int:
        return len(self.generators)

    @property
    def rank(self) -> int:
        return sum(f.rank for f in self.factors)

    @property
    def flat_dim(self) -> int:
        return sum(f.dimension for f in self.factors)

    @cached_property
    def _letter_stacks(self) -> tuple[np.ndarray, ...]:
        stacks = []
        for f, fac in enumerate(self.factors):
            dtype = complex if fac.is_complex else float
            out = []
            for gen in self.generators:
                m = _renormalize(np.asarray(gen[f], dtype=dtype))
                out.append(m)
                out.append(_renormalize(np.linalg.inv(m)))
            arr = np.array(out)
            arr.setflags(write=False)
            stacks.append(arr)
        return tuple(stacks)

    def letter_matrices(self, factor: int) -> np.ndarray:
        """Stack of shape (2k, d, d): generator and inverse for every letter code."""
        return self._letter_stacks[factor]

    def __eq__(self, other):
        if not isinstance(other, GroupSpec):
            return NotImplemented
        return (
            self.factors == other.factors
            and self.tolerance == other.tolerance
            and self.metadata == other.metadata
            and len(self.generators) == len(other.generators)
            and all(
                np.array_equal(a, b)
                for ga, gb in zip(self.generators, other.generators)
                for a, b in zip(ga, gb)
            )
        )

    __hash__ = None


# ---------------------------------------------------------------- config I/O


def _entry(value, path: str, is_complex: bool) -> complex | float:
    if is_complex:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return complex(value)
        if (
            isinstance(value, list)
            and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        ):
            return complex(value[0], value[1])
        raise ConfigError(f"{path}: expected a number or [re, im] pair")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"{path}: expected a real number")


def _matrix(raw, path: str, fac: FactorSpec) -> np.ndarray:
    d = fac.dimension
    if isinstance(raw, list) and len(raw) == d and all(isinstance(r, list) and len(r) == d for r in raw):
        flat = [x for r in raw for x in r]
    elif isinstance(raw, list) and len(raw) == d * d:
        flat = raw
    else:
        raise ConfigError(f"{path}: expected {d}x{d} row-major entries")
    vals = [_entry(x, f"{path}[{j}]", fac.is_complex) for j, x in enumerate(flat)]
    return np.array(vals, dtype=complex if fac.is_complex else float).reshape(d, d)


def spec_from_dict(doc: dict) -> GroupSpec:
    if not isinstance(doc, dict):
        raise ConfigError("$: expected an object")
    if "factors" not in doc:
        raise ConfigError("$.factors: missing")
    if "generators" not in doc:
        raise ConfigError("$.generators: missing")
    factors = []
    if not isinstance(doc["factors"], list) or not doc["factors"]:
        raise ConfigError("$.factors: expected a non-empty array")
    for i, f in enumerate(doc["factors"]):
        path = f"$.factors[{i}]"
        if not isinstance(f, dict) or "kind" not in f:
            raise ConfigError(f"{path}.kind: missing")
        kind = _KIND_ALIASES.get(f["kind"])
        if kind is None:
            raise ConfigError(f"{path}.kind: unknown kind {f['kind']!r}")
        dim = f.get("dimension", 2)
        if not isinstance(dim, int) or isinstance(dim, bool):
            raise ConfigError(f"{path}.dimension: expected an integer")
        proj = f.get("projectivized", False)
        if not isinstance(proj, bool):
            raise ConfigError(f"{path}.projectivized: expected a boolean")
        try:
            factors.append(FactorSpec(kind, dim, proj))
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    gens = []
    raw_gens = doc["generators"]
    if not isinstance(raw_gens, list):
        raise ConfigError("$.generators: expected an array")
    for i, g in enumerate(raw_gens):
        if not isinstance(g, list) or len(g) != len(factors):
            raise ConfigError(f"$.generators[{i}]: expected {len(factors)} matrices")
        gens.append(tuple(_matrix(m, f"$.generators[{i}][{f}]", factors[f]) for f, m in enumerate(g)))
    tol = doc.get("tolerance", 1e-10)
    if not isinstance(tol, (int, float)) or isinstance(tol, bool) or tol <= 0:
        raise ConfigError("$.tolerance: expected a positive number")
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise ConfigError("$.metadata: expected an object")
    return GroupSpec(tuple(factors), tuple(gens), float(tol), dict(meta))


def parse_group_config(text: str) -> GroupSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: invalid JSON ({exc})") from None
    return spec_from_dict(doc)


def spec_to_dict(spec: GroupSpec) -> dict:
    def enc(m: np.ndarray, fac: FactorSpec):
        if fac.is_complex:
            return [[[float(z.real), float(z.imag)] for z in row] for row in m]
        return [[float(x) for x in row] for row in m]

    doc = {
        "factors": [
            {"kind": f.kind, "dimension": f.dimension, "projectivized": f.projectivized} for f in spec.factors
        ],
        "generators": [[enc(m, f) for m, f in zip(g, spec.factors)] for g in spec.generators],
        "tolerance": spec.tolerance,
    }
    if spec.metadata:
        doc["metadata"] = spec.metadata
    return doc


def serialize_group_config(spec: GroupSpec) -> str:
    # json uses repr for floats, which round-trips exactly
    return json.dumps(spec_to_dict(spec), indent=1)


# ---------------------------------------------------------------- words


def letter(index: int, sign: int = 1) -> int:
    return 2 * index + (0 if sign > 0 else 1)


def inverse_letter(code: int) -> int:
    return code ^ 1


@dataclass(frozen=True)
class Word:
    """A reduced word, stored as letter codes."""

    codes: tuple[int, ...] = ()

    def __post_init__(self):
        for x, y in zip(self.codes, self.codes[1:]):
            if x ^ 1 == y:
                raise ValueError("word is not reduced")

    @property
    def letters(self) -> tuple[tuple[int, int], ...]:
        return tuple((c >> 1, -1 if c & 1 else 1) for c in self.codes)

    @classmethod
    def from_letters(cls, letters: Iterable[tuple[int, int]]) -> "Word":
        return reduce_word([letter(i, s) for i, s in letters])

    def inverse(self) -> "Word":
        return Word(tuple(c ^ 1 for c in reversed(self.codes)))

    def __mul__(self, other: "Word") -> "Word":
        return reduce_word(self.codes + other.codes)

    def __len__(self):
        return len(self.codes)

    def __str__(self):
        return format_word(self.codes)


def reduce_word(codes: Sequence[int]) -> Word:
    """Free reduction with a stack; idempotent."""
    out: list[int] = []
    for c in codes:
        if out and out[-1] == c ^ 1:
            out.pop()
        else:
            out.append(c)
    return Word(tuple(out))


def _gen_name(i: int) -> str:
    return string.ascii_lowercase[i] if i < 26 else f"g{i}"


def format_word(codes: Sequence[int]) -> str:
    return " ".join(_gen_name(c >> 1) + ("'" if c & 1 else "") for c in codes)


def parse_word(text: str) -> tuple[int, ...]:
    """Parse ``a b' c`` (also accepts ``ab'c`` without spaces)."""
    codes = []
    i = 0
    text = text.strip()
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "g" and i + 1 < len(text) and text[i + 1].isdigit():
            j = i + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            idx = int(text[i + 1:j])
            i = j
        elif ch in string.ascii_lowercase:
            idx = string.ascii_lowercase.index(ch)
            i += 1
        else:
            raise ValueError(f"bad word text {text!r}")
        inv = i < len(text) and text[i] == "'"
        if inv:
            i += 1
        codes.append(letter(idx, -1 if inv else 1))
    return tuple(codes)


def format_word_pairs(codes: Sequence[int]) -> str:
    """CSV form: ``index:sign`` pairs joined by ``;``."""
    return ";".join(f"{c >> 1}:{-1 if c & 1 else 1}" for c in codes)


def parse_word_pairs(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    out = []
    for part in text.split(";"):
        i, s = part.split(":")
        out.append(letter(int(i), int(s)))
    return tuple(out)


# ---------------------------------------------------------------- evaluation


def _renormalize(m: np.ndarray) -> np.ndarray:
    """Scale by a d-th root of the determinant so it becomes exactly 1 (up to rounding)."""
    d = m.shape[-1]
    det = np.linalg.det(m)
    if np.iscomplexobj(m):
        root = det ** (1 / d)
    else:
        root = np.sign(det) * np.abs(det) ** (1 / d) if d % 2 else np.abs(det) ** (1 / d)
    return m / np.asarray(root)[..., None, None]


def evaluate_word(spec: GroupSpec, w: Word | Sequence[int]) -> tuple[np.ndarray, ...]:
    codes = w.codes if isinstance(w, Word) else tuple(w)
    out = []
    for f, fac in enumerate(spec.factors):
        mats = spec.letter_matrices(f)
        m = np.eye(fac.dimension, dtype=mats.dtype)
        with np.errstate(over="ignore", invalid="ignore"):
            for c in codes:
                m = m @ mats[c]
        if not np.all(np.isfinite(m)):
            raise WordOverflowError("matrix entries overflowed; use shorter words")
        out.append(m)
    return tuple(out)


def evaluate_batch(spec: GroupSpec, words: np.ndarray) -> list[np.ndarray]:
    """Evaluate an (N, n) array of letter codes; returns one (N, d, d) stack per factor."""
    words = np.asarray(words)
    out = []
    for f, fac in enumerate(spec.factors):
        mats = spec.letter_matrices(f)
        if words.shape[1] == 0:
            out.append(np.broadcast_to(np.eye(fac.dimension, dtype=mats.dtype), (len(words), fac.dimension, fac.dimension)).copy())
            continue
        m = mats[words[:, 0]]
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(1, words.shape[1]):
                m = m @ mats[words[:, j]]
        if not np.all(np.isfinite(m)):
            raise WordOverflowError("matrix entries overflowed; use shorter words")
        out.append(m)
    return out


def same_element(spec: GroupSpec, g: Sequence[np.ndarray], h: Sequence[np.ndarray], tol: float | None = None) -> bool:
    """Equality of matrix tuples, up to sign on projectivized factors."""
    tol = spec.tolerance if tol is None else tol
    for fac, a, b in zip(spec.factors, g, h):
        scale = max(1.0, np.abs(a).max(), np.abs(b).max())
        err = np.abs(a - b).max()
        if fac.projectivized:
            err = min(err, np.abs(a + b).max())
        if err > tol * scale:
            return False
    return True


# ---------------------------------------------------------------- ping-pong


def isometric_circles(spec: GroupSpec, factor: int) -> list[tuple[complex, float]]:
    """Isometric circles |cz + d| = 1 of every letter on a 2x2 factor, as (center, radius)."""
    if spec.factors[factor].dimension != 2:
        raise ConfigError("isometric circles need a 2x2 factor")
    out = []
    for m in spec.letter_matrices(factor):
        c, d = m[1, 0], m[1, 1]
        if c == 0:
            raise ConfigError("letter fixes infinity; isometric circle undefined")
        out.append((complex(-d / c), float(1 / abs(c))))
    return out


def pingpong_gap(spec: GroupSpec, factor: int) -> float:
    """Smallest gap between the letters' isometric circles.

    A positive gap means the 2k circles are disjoint, so the generators play
    ping-pong on their exteriors and generate a free discrete (Schottky) group.
    """
    cs = isometric_circles(spec, factor)
    gap = np.inf
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            gap = min(gap, abs(cs[i][0] - cs[j][0]) - cs[i][1] - cs[j][1])
    return float(gap)
