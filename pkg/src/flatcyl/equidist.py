"""Census tables of primitive classes and the counting / holonomy statistics run on them.

A census is stored column-wise (``CensusTable``); iterating it yields
``CensusRecord`` objects one at a time.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.stats import kstest

from .census import CyclicWord, classes_array, reduced_words_layers, shard_letters
from .cone import ExponentEstimate, LinearForm, MuCensus, NormLike, RangeError, fit_prime
from .group import GroupSpec, evaluate_batch, format_word_pairs, parse_word_pairs
from .invariants import (
    TRIVIAL,
    CartanPoint,
    Holonomy,
    UnsupportedHolonomyError,
    cartan_batch,
    format_holonomy_entry,
    holonomy,
    holonomy_angles_batch,
    holonomy_period,
    jordan_batch,
    parse_holonomy_entry,
)

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


@dataclass(frozen=True, eq=False)
class CensusRecord:
    word: CyclicWord
    length: int
    lam: CartanPoint
    ell_psi: float
    n_values: Mapping[str, float]
    holonomy: Holonomy


@dataclass(eq=False)
class CensusTable:
    """Column store: one row per primitive class, canonical order (length, then lexicographic)."""

    spec: GroupSpec
    codes: np.ndarray  # (N, max length) int8, padded with -1
    lengths: np.ndarray
    lam: np.ndarray  # (N, flat)
    ell_psi: np.ndarray
    n_values: dict[str, np.ndarray]
    hol: list[np.ndarray]  # per factor: float angles, or object array of sign strings
    excluded: int = 0
    norm_comparison: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.lengths)

    def word(self, i: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self.codes[i, : self.lengths[i]])

    def record(self, i: int) -> CensusRecord:
        parts = []
        off = 0
        for fac in self.spec.factors:
            parts.append(self.lam[i, off:off + fac.dimension])
            off += fac.dimension
        entries = []
        for col in self.hol:
            v = col[i]
            entries.append(float(v) if isinstance(v, (float, np.floating)) else parse_holonomy_entry(v))
        return CensusRecord(
            CyclicWord(self.word(i)), int(self.lengths[i]), CartanPoint(tuple(parts)), float(self.ell_psi[i]),
            {k: float(v[i]) for k, v in self.n_values.items()}, Holonomy(tuple(entries)),
        )

    def __getitem__(self, i: int) -> CensusRecord:
        return self.record(i)

    def __iter__(self) -> Iterator[CensusRecord]:
        return (self.record(i) for i in range(len(self)))

    def angle_columns(self, factors: Sequence[int] | None = None) -> np.ndarray:
        idx = list(range(len(self.hol))) if factors is None else list(factors)
        for f in idx:
            if self.hol[f].dtype == object:
                raise UnsupportedHolonomyError(f"factor {f} carries sign-typed holonomy")
        return np.stack([self.hol[f] for f in idx], axis=1) if idx else np.empty((len(self), 0))

    def ordering(self, key: str) -> np.ndarray:
        if key in ("psi", "ell_psi"):
            return self.ell_psi
        if key in self.n_values:
            return self.n_values[key]
        raise KeyError(f"unknown ordering {key!r}")


# ---------------------------------------------------------------- construction


def _sign_strings(spec: GroupSpec, f: int, stack: np.ndarray) -> np.ndarray:
    out = np.empty(len(stack), dtype=object)
    for i, m in enumerate(stack):
        mats = [np.eye(fac.dimension) for fac in spec.factors]
        mats[f] = m
        # holonomy() also re-checks loxodromy on this factor
        out[i] = format_holonomy_entry(holonomy(spec, mats).entries[f])
    return out


def _shard(spec: GroupSpec, L: int, psi: LinearForm, norms: Sequence[NormLike], letters, margin: float):
    words, lengths, lams, hols = [], [], [], [[] for _ in spec.factors]
    excluded = 0
    for n in range(1, L + 1):
        arr = classes_array(spec.k, n, primitive_only=True, first_letters=letters)
        if len(arr) == 0:
            continue
        stacks = evaluate_batch(spec, arr)
        lam = np.concatenate([jordan_batch(s) for s in stacks], axis=1)
        gaps = []
        off = 0
        for fac in spec.factors:
            gaps.append(-np.diff(lam[:, off:off + fac.dimension], axis=1))
            off += fac.dimension
        ok = np.all(np.concatenate(gaps, axis=1) > margin, axis=1)
        excluded += int((~ok).sum())
        arr, lam = arr[ok], lam[ok]
        stacks = [s[ok] for s in stacks]
        words.append(np.pad(arr, ((0, 0), (0, L - n)), constant_values=-1))
        lengths.append(np.full(len(arr), n))
        lams.append(lam)
        for f, fac in enumerate(spec.factors):
            if fac.is_complex:
                hols[f].append(holonomy_angles_batch(stacks[f], holonomy_period(spec, f)))
            else:
                hols[f].append(_sign_strings(spec, f, stacks[f]))
    flat = sum(f.dimension for f in spec.factors)
    return (
        np.concatenate(words) if words else np.empty((0, L), np.int8),
        np.concatenate(lengths) if lengths else np.empty(0, int),
        np.concatenate(lams) if lams else np.empty((0, flat)),
        [np.concatenate(h) if h else np.empty(0) for h in hols],
        excluded,
    )


def build_census(
    spec: GroupSpec, L: int, psi: LinearForm, norms: Sequence[NormLike] = (), shards: int = 1,
    margin: float = 1e-6, workers: int = 1,
) -> CensusTable:
    """One row per primitive class of length <= L.

    Shards split the classes by first letter and are merged back into
    canonical order, so the result does not depend on ``shards``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    jobs = [shard_letters(spec.k, s, shards) for s in range(shards)]
    jobs = [j for j in jobs if j]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_shard, [spec] * len(jobs), [L] * len(jobs), [psi] * len(jobs),
                                  [norms] * len(jobs), jobs, [margin] * len(jobs)))
    else:
        parts = [_shard(spec, L, psi, norms, j, margin) for j in jobs]
    codes = np.concatenate([p[0] for p in parts])
    lengths = np.concatenate([p[1] for p in parts])
    lam = np.concatenate([p[2] for p in parts])
    hol = [np.concatenate([p[3][f] for p in parts]) for f in range(len(spec.factors))]
    excluded = sum(p[4] for p in parts)
    if excluded:
        log.warning("%d classes failed the loxodromy margin and were excluded", excluded)
    order = _canonical_order(codes, lengths)
    codes, lengths, lam = codes[order], lengths[order], lam[order]
    hol = [h[order] for h in hol]
    ell = psi(lam)
    if len(ell) and np.any(ell <= 0):
        raise ValueError("psi is not positive on some Jordan projection")
    nv = {n.name: np.asarray(n.value(lam), dtype=float) for n in norms}
    cmp_ = {n.name: n.comparison for n in norms if n.comparison is not None}
    return CensusTable(spec, codes, lengths, lam, np.asarray(ell, dtype=float), nv, hol, excluded, cmp_)


def _canonical_order(codes: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    keys = [codes[:, j] for j in range(codes.shape[1] - 1, -1, -1)] + [lengths]
    return np.lexsort(keys)


def mu_census(spec: GroupSpec, L: int) -> MuCensus:
    """Cartan projections of all reduced words of length 1..L."""
    pts, lens = [], []
    for n, layer in enumerate(reduced_words_layers(spec.k, L), 1):
        stacks = evaluate_batch(spec, layer)
        pts.append(np.concatenate([cartan_batch(s) for s in stacks], axis=1))
        lens.append(np.full(len(layer), n))
    return MuCensus(np.concatenate(pts), np.concatenate(lens))


# ---------------------------------------------------------------- counting


@dataclass(frozen=True, eq=False)
class CountSeries:
    ordering: str
    grid: np.ndarray
    counts: np.ndarray
    delta: float
    intercept: float
    residual: float
    ratios: np.ndarray
    weighted: np.ndarray  # sum of 1/ell over the same thresholds

    @property
    def window(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def estimate(self) -> ExponentEstimate:
        return ExponentEstimate(self.delta, self.window, self.residual, "prime", self.intercept)

    def to_dict(self) -> dict:
        return {
            "ordering": self.ordering,
            "grid": [float(x) for x in self.grid],
            "counts": [int(x) for x in self.counts],
            "delta_fit": self.delta,
            "residual": self.residual,
            "ratios": [float(x) for x in self.ratios],
            "weighted_counts": [float(x) for x in self.weighted],
        }


def threshold_counts(values: np.ndarray, grid: Sequence[float]) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    return np.searchsorted(v, np.asarray(grid, dtype=float), side="right")


def count_series(table_or_values, key: str = "psi", grid: Sequence[float] | None = None, points: int = 12) -> CountSeries:
    """Counts N(T) on a grid, a fit of log N = c + delta T - log(delta T), and c(T) = N delta T e^{-delta T}."""
    if isinstance(table_or_values, CensusTable):
        vals = table_or_values.ordering(key)
    else:
        vals = np.asarray(table_or_values, dtype=float)
    v = np.sort(vals)
    if grid is None:
        raise ValueError("a threshold grid is required")
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 3 or np.any(np.diff(grid) <= 0):
        raise RangeError("grid must be increasing with at least 3 points")
    counts = threshold_counts(v, grid)
    if len(v) == 0 or np.any(counts == 0) or grid[-1] > v[-1]:
        raise RangeError(f"grid ({grid[0]}, {grid[-1]}) is not inside the populated range")
    d, c, r = fit_prime(grid, counts.astype(float))
    ratios = counts * d * grid * np.exp(-d * grid)
    inv = np.cumsum(1 / v)
    weighted = np.array([inv[n - 1] for n in counts])
    return CountSeries(key, grid, counts, d, c, r, ratios, weighted)


def relative_spread(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    return float((x.max() - x.min()) / x.mean())


def complete_threshold(table: CensusTable, key: str = "psi", length: int | None = None) -> float:
    """Below this value every primitive class is in the census: min over classes of maximal length.

    With ``length`` the threshold is computed as if the census stopped there.
    """
    vals = table.ordering(key)
    L = int(table.lengths.max()) if length is None else length
    return float(vals[table.lengths == L].min())


def census_shells(table: CensusTable, count: int = 3, key: str = "psi") -> np.ndarray:
    """Completeness thresholds of the ``count`` largest word lengths, increasing.

    These are the census shells: the counts below each of them are exact.
    """
    L = int(table.lengths.max())
    if L < count:
        raise RangeError(f"census has only {L} lengths")
    return np.array([complete_threshold(table, key, n) for n in range(L - count + 1, L + 1)])


def default_grid(table: CensusTable, key: str = "psi", points: int = 12) -> np.ndarray:
    """Fit grid from the completeness threshold four lengths down to the top one."""
    L = int(table.lengths.max())
    hi = complete_threshold(table, key)
    lo = complete_threshold(table, key, max(1, L - 4)) if L > 1 else hi / 2
    if lo >= hi:
        lo = hi / 2
    return np.linspace(lo, hi, points)


def ratio_at(series: CountSeries, values: np.ndarray, T: Sequence[float]) -> np.ndarray:
    """c(T) = N(T) delta T e^{-delta T} at arbitrary thresholds with the series' fitted delta."""
    T = np.asarray(T, dtype=float)
    n = threshold_counts(values, T)
    return n * series.delta * T * np.exp(-series.delta * T)


# ---------------------------------------------------------------- holonomy


@dataclass(frozen=True)
class UniformityReport:
    n: int
    ks: tuple[float, ...]  # per coordinate, after rotation to the canonical frame
    kuiper: tuple[float, ...]
    discrepancy: float | None  # 2-d torus box discrepancy (None in one dimension)
    difference_ks: float | None  # KS of theta_1 - theta_2, sensitive to diagonal concentration
    statistic: float  # ks[0] in one dimension, discrepancy in two
    threshold: float
    uniform: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n, "ks": list(self.ks), "kuiper": list(self.kuiper), "discrepancy": self.discrepancy,
            "difference_ks": self.difference_ks, "statistic": self.statistic, "threshold": self.threshold,
            "uniform": self.uniform,
        }


def canonical_frame(theta: np.ndarray) -> np.ndarray:
    """Rotate each coordinate by its circular mean.

    The circular mean moves with a global rotation, so statistics computed in
    this frame do not depend on where the angle origin sits.
    """
    theta = np.atleast_2d(theta)
    mean = np.angle(np.exp(1j * theta).mean(axis=0))
    return np.mod(theta - mean, TWO_PI)


def star_discrepancy(u: np.ndarray, bins: int = 64) -> float:
    """max |empirical - area| over anchored boxes [0,x) x [0,y), x and y on a bins x bins grid; u in [0,1)^2."""
    h, _, _ = np.histogram2d(u[:, 0], u[:, 1], bins=bins, range=[[0, 1], [0, 1]])
    cum = h.cumsum(0).cumsum(1) / len(u)
    x = np.arange(1, bins + 1) / bins
    return float(np.abs(cum - np.outer(x, x)).max())


def torus_discrepancy(u: np.ndarray, bins: int = 64) -> float:
    """max |empirical - area| over all grid-aligned boxes of the torus, wrap-around included.

    Every box [a, a+w) x [b, b+h) with corners on the bins x bins grid is
    checked, so the value does not depend on where the origin of either
    circle is placed (up to the grid resolution).
    """
    h, _, _ = np.histogram2d(u[:, 0], u[:, 1], bins=bins, range=[[0, 1], [0, 1]])
    h /= len(u)
    cum = np.zeros((2 * bins + 1, 2 * bins + 1))
    cum[1:, 1:] = np.tile(h, (2, 2)).cumsum(0).cumsum(1)
    start = np.arange(bins)
    widths = np.arange(1, bins + 1)
    x0 = start[:, None, None]
    y0 = start[None, :, None]
    y1 = y0 + widths[None, None, :]
    best = 0.0
    for wx in range(1, bins + 1):
        x1 = x0 + wx
        mass = cum[x1, y1] - cum[x0, y1] - cum[x1, y0] + cum[x0, y0]
        best = max(best, float(np.abs(mass - wx * widths[None, None, :] / bins**2).max()))
    return best


def holonomy_uniformity(
    table_or_angles, T: float | None = None, factors: Sequence[int] | None = None, key: str = "psi",
    tolerance: float = 0.1, min_samples: int = 200, period: float = TWO_PI,
) -> UniformityReport:
    """Distance of the holonomy angles below T from the uniform law on the circle / torus.

    ``uniform`` is true when the statistic is below max(tolerance, 1.63/sqrt(n));
    the second term is the 1% Kolmogorov critical value, the first a desk-scale
    allowance for the slow convergence of finite censuses.
    """
    if isinstance(table_or_angles, CensusTable):
        theta = table_or_angles.angle_columns(factors)
        if T is not None:
            theta = theta[table_or_angles.ordering(key) <= T]
        if factors is not None:
            period = max(holonomy_period(table_or_angles.spec, f) for f in factors) if factors else TWO_PI
    else:
        theta = np.atleast_2d(np.asarray(table_or_angles, dtype=float))
        if theta.shape[0] == 1 and theta.shape[1] > 2:
            theta = theta.T
    n, dim = theta.shape
    if dim not in (1, 2):
        raise ValueError("uniformity is assessed on one or two angle coordinates")
    if n < min_samples:
        raise ValueError(f"only {n} records below T, need {min_samples}")
    scaled = canonical_frame(theta * (TWO_PI / period)) / TWO_PI
    ks = tuple(float(kstest(scaled[:, j], "uniform").statistic) for j in range(dim))
    kp = tuple(kuiper_statistic(scaled[:, j]) for j in range(dim))
    if dim == 2:
        disc = torus_discrepancy(scaled)
        diff = np.mod(theta[:, 0] - theta[:, 1], period) / period
        dks = float(kstest(diff, "uniform").statistic)
        stat = disc
    else:
        disc, dks, stat = None, None, ks[0]
    thr = max(tolerance, 1.63 / np.sqrt(n))
    return UniformityReport(n, ks, kp, disc, dks, stat, thr, bool(stat <= thr))


def kuiper_statistic(u: np.ndarray) -> float:
    """Kuiper's V = D+ + D- against uniform[0,1); unlike KS it is invariant under rotation of the circle."""
    u = np.sort(u)
    n = len(u)
    i = np.arange(1, n + 1)
    return float(np.max(i / n - u) + np.max(u - (i - 1) / n))


def window_count(
    table: CensusTable, T: float, windows: Sequence[tuple[float, float]], delta: float,
    factors: Sequence[int] | None = None, key: str = "psi",
) -> tuple[int, float]:
    """Observed classes with ell <= T and angles in the windows, and the prediction prod(w/2pi) e^{dT}/(dT)."""
    theta = table.angle_columns(factors)
    if len(windows) != theta.shape[1]:
        raise RangeError("one window per selected factor is required")
    mask = table.ordering(key) <= T
    frac = 1.0
    for j, (lo, hi) in enumerate(windows):
        if not (0 <= lo <= hi <= TWO_PI):
            raise RangeError(f"window {j} = ({lo}, {hi}) is not inside [0, 2pi]")
        mask &= (theta[:, j] > lo) & (theta[:, j] < hi) if hi > lo else False
        frac *= (hi - lo) / TWO_PI
    if not np.any(mask) and frac == 0:
        return 0, 0.0
    return int(np.count_nonzero(mask)), float(frac * np.exp(delta * T) / (delta * T))


# ---------------------------------------------------------------- CSV


def csv_header(spec: GroupSpec, norm_names: Iterable[str]) -> list[str]:
    return (
        ["word", "length"] + [f"lambda_{i}" for i in range(spec.rank)] + ["ell_psi"] + list(norm_names)
        + [f"hol_{f}" for f in range(len(spec.factors))]
    )


def _reduced_columns(spec: GroupSpec, lam: np.ndarray) -> np.ndarray:
    cols = []
    off = 0
    for fac in spec.factors:
        cols.append(lam[:, off:off + fac.dimension - 1])
        off += fac.dimension
    return np.concatenate(cols, axis=1)


def _g(x: float) -> str:
    return f"{x:.17g}"


def write_census_csv(table: CensusTable, out) -> None:
    """Write the census; ``out`` is a path or a text stream."""
    own = isinstance(out, str)
    fh = open(out, "w", newline="", encoding="utf-8") if own else out
    try:
        names = list(table.n_values)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(table.spec, names))
        red = _reduced_columns(table.spec, table.lam)
        nv = [table.n_values[k] for k in names]
        for i in range(len(table)):
            row = [format_word_pairs(table.word(i)), str(int(table.lengths[i]))]
            row += [_g(x) for x in red[i]]
            row.append(_g(table.ell_psi[i]))
            row += [_g(c[i]) for c in nv]
            row += [_g(h[i]) if h.dtype != object else h[i] for h in table.hol]
            w.writerow(row)
    finally:
        if own:
            fh.close()


def census_to_csv_text(table: CensusTable) -> str:
    buf = io.StringIO()
    write_census_csv(table, buf)
    return buf.getvalue()


class MissingColumnError(KeyError):
    pass


def read_census_csv(spec: GroupSpec, source) -> CensusTable:
    """Parse a census CSV (path or text stream) back into a table."""
    own = isinstance(source, str)
    fh = open(source, newline="", encoding="utf-8") if own else source
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows:
        raise MissingColumnError("empty census file")
    head = rows[0]
    need = ["word", "length"] + [f"lambda_{i}" for i in range(spec.rank)] + ["ell_psi"]
    for col in need:
        if col not in head:
            raise MissingColumnError(col)
    idx = {c: head.index(c) for c in head}
    hol_cols = [c for c in head if c.startswith("hol_")]
    fixed = set(need) | set(hol_cols)
    norm_cols = [c for c in head if c not in fixed]
    body = rows[1:]
    words = [parse_word_pairs(r[idx["word"]]) for r in body]
    lengths = np.array([int(r[idx["length"]]) for r in body], dtype=int)
    width = int(lengths.max()) if len(body) else 0
    codes = np.full((len(body), width), -1, dtype=np.int8)
    for i, w in enumerate(words):
        codes[i, : len(w)] = w
    red = np.array([[float(r[idx[f"lambda_{i}"]]) for i in range(spec.rank)] for r in body]).reshape(len(body), spec.rank)
    lam = np.concatenate([CartanPoint.from_reduced(spec, x).flat[None] for x in red]) if len(body) else np.empty((0, spec.flat_dim))
    ell = np.array([float(r[idx["ell_psi"]]) for r in body])
    nv = {c: np.array([float(r[idx[c]]) for r in body]) for c in norm_cols}
    hol = []
    for c in hol_cols:
        raw = [r[idx[c]] for r in body]
        parsed = [parse_holonomy_entry(x) for x in raw]
        if all(isinstance(p, float) for p in parsed):
            hol.append(np.array(parsed, dtype=float))
        else:
            hol.append(np.array(raw, dtype=object))
    return CensusTable(spec, codes, lengths, lam, ell, nv, hol)
