"""Cartan and Jordan projections, holonomy, eigenflags and SL_2 cell coordinates.

Points of the Cartan subspace are kept per factor; a factor of dimension d
contributes a weakly decreasing vector of length d summing to zero.  For SL_d
the last coordinate is always recomputed as minus the sum of the others,
which keeps long words from drifting off the trace-zero hyperplane.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .group import GroupSpec
from .linalg import ConvergenceError, adjugate_batch, eigenvalues, jacobi_singular_values

TWO_PI = 2 * np.pi


class NumericError(ArithmeticError):
    pass


class NotLoxodromicError(ValueError):
    pass


class UnsupportedHolonomyError(ValueError):
    pass


class DecompositionError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class CartanPoint:
    parts: tuple[np.ndarray, ...]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.parts)

    def reduced(self) -> np.ndarray:
        """The independent coordinates: all but the last entry of every factor."""
        return np.concatenate([p[:-1] for p in self.parts])

    @classmethod
    def from_flat(cls, spec: GroupSpec, flat: Sequence[float]) -> "CartanPoint":
        out, i = [], 0
        for fac in spec.factors:
            out.append(np.asarray(flat[i:i + fac.dimension], dtype=float))
            i += fac.dimension
        return cls(tuple(out))

    @classmethod
    def from_reduced(cls, spec: GroupSpec, red: Sequence[float]) -> "CartanPoint":
        out, i = [], 0
        for fac in spec.factors:
            head = np.asarray(red[i:i + fac.rank], dtype=float)
            out.append(np.append(head, -head.sum()))
            i += fac.rank
        return cls(tuple(out))

    def __mul__(self, s: float) -> "CartanPoint":
        return CartanPoint(tuple(s * p for p in self.parts))

    __rmul__ = __mul__

    def allclose(self, other: "CartanPoint", rtol: float = 1e-8, atol: float = 1e-12) -> bool:
        return np.allclose(self.flat, other.flat, rtol=rtol, atol=atol)

    def __repr__(self):
        return "CartanPoint(" + ", ".join(np.array2string(p, precision=6) for p in self.parts) + ")"


def _close_sum(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=float)
    v[..., -1] = -v[..., :-1].sum(axis=-1)
    return v


def _check_finite(g) -> None:
    for m in g:
        if not np.all(np.isfinite(m)):
            raise NumericError("matrix has non-finite entries")


def _log_singular_values(stack: np.ndarray) -> np.ndarray:
    """Log singular values of unimodular matrices, descending, sum-closed.

    The lower half is read off the adjugate (the inverse, since det = 1): in a
    long product the small singular values are below the rounding floor of
    the matrix itself.
    """
    d = stack.shape[-1]
    with np.errstate(divide="ignore"):
        top = np.log(jacobi_singular_values(stack))
    if d == 2:
        return _close_sum(top)
    low = -np.log(jacobi_singular_values(adjugate_batch(stack)))[..., ::-1]
    half = (d + 1) // 2
    top[..., half:] = low[..., half:]
    if d % 2:
        mid = d // 2
        top[..., mid] = 0.0
        top[..., mid] = -top.sum(axis=-1)
        return top
    return top - top.mean(axis=-1, keepdims=True)


def cartan(spec: GroupSpec, g: Sequence[np.ndarray]) -> CartanPoint:
    _check_finite(g)
    return CartanPoint(tuple(_log_singular_values(np.asarray(m)) for m in g))


def cartan_batch(stack: np.ndarray) -> np.ndarray:
    """Log singular values for an (N, d, d) stack, shape (N, d), sum-closed."""
    if not np.all(np.isfinite(stack)):
        raise NumericError("matrix stack has non-finite entries")
    return _log_singular_values(np.asarray(stack))


def sl2_eigenvalues(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of unimodular 2x2 matrices from the trace quadratic, larger modulus first.

    The determinant is taken to be 1 rather than recomputed: for long words
    ad - bc is dominated by cancellation error.
    """
    stack = np.asarray(stack)
    tr = (stack[..., 0, 0] + stack[..., 1, 1]).astype(complex)
    big = np.abs(tr) > 1
    with np.errstate(divide="ignore", invalid="ignore"):
        # tr * sqrt(1 - 4/tr^2) avoids overflowing tr^2 for long words
        scaled = tr * np.sqrt(1 - (2 / np.where(big, tr, 1)) ** 2)
    small = np.where(big, 0, tr)
    sq = np.where(big, scaled, np.sqrt(small * small - 4))
    sq = np.where((np.conj(tr / np.maximum(np.abs(tr), 1)) * sq).real >= 0, sq, -sq)
    l1 = (tr + sq) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        l2 = np.where(l1 != 0, 1 / l1, 0)
    return l1, l2


def jordan_batch(stack: np.ndarray) -> np.ndarray:
    """Log eigenvalue moduli for an (N, d, d) stack, descending, sum-closed."""
    d = stack.shape[-1]
    if d == 2:
        l1, _ = sl2_eigenvalues(stack)
        t = np.log(np.abs(l1))
        return np.stack([t, -t], axis=-1)
    out = np.empty(stack.shape[:-1])
    for i, m in enumerate(stack):
        out[i] = np.log(np.abs(eigenvalues(m, unimodular=True)))
    return _close_sum(out)


def _eig(m: np.ndarray) -> np.ndarray:
    if m.shape[0] == 2:
        l1, l2 = sl2_eigenvalues(m)
        return np.array([l1, l2])
    try:
        return eigenvalues(m, unimodular=True)
    except ConvergenceError as exc:
        raise NumericError(str(exc)) from None


def jordan(spec: GroupSpec, g: Sequence[np.ndarray]) -> CartanPoint:
    _check_finite(g)
    return CartanPoint(tuple(_close_sum(np.log(np.abs(_eig(m)))) for m in g))


def is_loxodromic(spec: GroupSpec, g: Sequence[np.ndarray], margin: float = 1e-6) -> bool:
    lam = jordan(spec, g)
    return all(np.all(-np.diff(p) > margin) for p in lam.parts)


def opposition(spec: GroupSpec, v: CartanPoint) -> CartanPoint:
    # reverse-and-negate; on a sorted SL_2 point (t, -t) this is the identity
    return CartanPoint(tuple(-p[::-1] for p in v.parts))


# ---------------------------------------------------------------- holonomy

TRIVIAL = "trivial"


@dataclass(frozen=True)
class Holonomy:
    """Per factor: an angle (complex factors) or a sign tuple / ``TRIVIAL`` (real factors)."""

    entries: tuple

    def angles(self, factors: Sequence[int] | None = None) -> np.ndarray:
        idx = range(len(self.entries)) if factors is None else factors
        vals = [self.entries[i] for i in idx]
        if any(not isinstance(v, float) for v in vals):
            raise UnsupportedHolonomyError("selected factors are not angle-typed")
        return np.array(vals)


def holonomy_period(spec: GroupSpec, factor: int) -> float:
    return np.pi if spec.factors[factor].projectivized else TWO_PI


def _angle_from_ratio(l1: complex, l2: complex, period: float) -> float:
    ang = float(np.angle(l1 / l2)) % period
    return 0.0 if ang >= period else ang


def holonomy(spec: GroupSpec, g: Sequence[np.ndarray], margin: float = 1e-9) -> Holonomy:
    entries = []
    for f, (fac, m) in enumerate(zip(spec.factors, g)):
        ev = _eig(m)
        logs = np.log(np.abs(ev))
        if not np.all(-np.diff(logs) > margin):
            raise NotLoxodromicError(f"factor {f} is not loxodromic")
        if fac.is_complex:
            entries.append(_angle_from_ratio(ev[0], ev[-1], holonomy_period(spec, f)))
            continue
        if np.any(np.abs(ev.imag) > 1e-8 * np.abs(ev)):
            raise UnsupportedHolonomyError(f"factor {f} has non-real spectrum")
        signs = tuple(int(s) for s in np.sign(ev.real))
        if fac.projectivized and fac.dimension % 2 == 0 and signs[0] < 0:
            signs = tuple(-s for s in signs)
        entries.append(TRIVIAL if all(s > 0 for s in signs) else signs)
    return Holonomy(tuple(entries))


def holonomy_angles_batch(stack: np.ndarray, period: float = TWO_PI) -> np.ndarray:
    """Angles of complex SL_2 stacks in [0, period)."""
    l1, l2 = sl2_eigenvalues(stack)
    # difference of arguments: the ratio itself can overflow for long words
    ang = (np.angle(l1) - np.angle(l2)) % period
    return np.where(ang >= period, 0.0, ang)


def format_holonomy_entry(e) -> str:
    if isinstance(e, float):
        return f"{e:.17g}"
    if e == TRIVIAL:
        return TRIVIAL
    return "".join("+" if s > 0 else "-" for s in e)


def parse_holonomy_entry(text: str):
    if text == TRIVIAL:
        return TRIVIAL
    if text and set(text) <= {"+", "-"}:
        return tuple(1 if ch == "+" else -1 for ch in text)
    return float(text)


# ---------------------------------------------------------------- flags


@dataclass(frozen=True, eq=False)
class Flag:
    attracting: tuple[np.ndarray, ...]
    repelling: tuple[np.ndarray, ...]


def _normalize_line(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if len(nz):
        z = v[nz[0]]
        v = v * (np.conj(z) / abs(z))
    if np.all(np.abs(v.imag) == 0):
        v = v.real
    return v


def _eigvec(m: np.ndarray, lam: complex) -> np.ndarray:
    d = m.shape[0]
    if d == 2:
        a, b, c, e = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        cands = [np.array([b, lam - a]), np.array([lam - e, c])]
        v = max(cands, key=lambda x: np.linalg.norm(x))
        if np.linalg.norm(v) == 0:
            v = np.array([1.0, 0.0])
    else:
        shift = lam * (1 + 1e-12) + 1e-300
        v = np.ones(d, dtype=complex)
        for _ in range(3):
            v = np.linalg.solve(m - shift * np.eye(d), v)
            v = v / np.linalg.norm(v)
    return _normalize_line(np.asarray(v, dtype=complex))


def eigenflags(spec: GroupSpec, g: Sequence[np.ndarray], margin: float = 1e-9) -> Flag:
    att, rep = [], []
    tol = max(spec.tolerance, 1e-9)
    for f, m in enumerate(g):
        ev = _eig(m)
        logs = np.log(np.abs(ev))
        if not np.all(-np.diff(logs) > margin):
            raise NotLoxodromicError(f"factor {f} is not loxodromic")
        for lam, dest in ((ev[0], att), (ev[-1], rep)):
            v = _eigvec(m, lam)
            res = np.linalg.norm(m @ v - lam * v)
            if res > tol * max(1.0, np.linalg.norm(m)):
                raise NumericError(f"eigenvector residual {res:.3e} in factor {f}")
            dest.append(v)
    return Flag(tuple(att), tuple(rep))


def axis_matrix(spec: GroupSpec, g: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """Per SL_2 factor, the unimodular matrix [v+ | v-] conjugating g to a diagonal matrix."""
    fl = eigenflags(spec, g)
    out = []
    for fac, vp, vm in zip(spec.factors, fl.attracting, fl.repelling):
        p = np.column_stack([vp, vm]).astype(complex)
        det = p[0, 0] * p[1, 1] - p[0, 1] * p[1, 0]
        p = p / np.sqrt(det)
        if not fac.is_complex and np.all(np.abs(p.imag) < 1e-12):
            p = p.real
        out.append(p)
    return tuple(out)


# ---------------------------------------------------------------- SL_2 cells


@dataclass(frozen=True)
class CellCoords:
    """Coordinates of one SL_2 factor: lower entry y, upper entry x, log a = t, phase of m."""

    y: complex
    x: complex
    t: float
    phase: complex


def _require_sl2(spec: GroupSpec) -> None:
    if any(f.dimension != 2 for f in spec.factors):
        raise DecompositionError("cell coordinates need every factor to be SL_2")


def _pivot_ok(p, tol: float) -> None:
    if abs(p) < tol:
        raise DecompositionError(f"pivot {abs(p):.3e} below tolerance: not in the open cell")


def namn_coords(m: np.ndarray, tol: float = 1e-12) -> CellCoords:
    """g = [[1,0],[y,1]] [[1,x],[0,1]] diag(a m, 1/(a m))."""
    p, q, r = m[0, 0], m[0, 1], m[1, 0]
    _pivot_ok(p, tol)
    return CellCoords(y=r / p, x=q * p, t=float(np.log(abs(p))), phase=p / abs(p))


def nnam_coords(m: np.ndarray, tol: float = 1e-12) -> CellCoords:
    """g = [[1,x],[0,1]] [[1,0],[y,1]] diag(a m, 1/(a m))."""
    q, r, s = m[0, 1], m[1, 0], m[1, 1]
    _pivot_ok(s, tol)
    alpha = 1 / s
    return CellCoords(y=r * s, x=q / s, t=float(np.log(abs(alpha))), phase=alpha / abs(alpha))


def lower(y) -> np.ndarray:
    return np.array([[1, 0], [y, 1]], dtype=complex)


def upper(x) -> np.ndarray:
    return np.array([[1, x], [0, 1]], dtype=complex)


def diag_am(t: float, phase: complex) -> np.ndarray:
    z = np.exp(t) * phase
    return np.array([[z, 0], [0, 1 / z]], dtype=complex)


def decompose_namn(spec: GroupSpec, g: Sequence[np.ndarray]) -> list[tuple[np.ndarray, ...]]:
    """Per factor (h, n, a, m) with g = h n a m."""
    _require_sl2(spec)
    out = []
    for fac, m in zip(spec.factors, g):
        c = namn_coords(np.asarray(m), spec.tolerance)
        dt = complex if fac.is_complex else float
        h = lower(c.y).astype(dt) if fac.is_complex else lower(c.y).real
        n = upper(c.x).astype(dt) if fac.is_complex else upper(c.x).real
        a = np.diag([np.exp(c.t), np.exp(-c.t)]).astype(dt)
        ph = c.phase if fac.is_complex else float(np.sign(c.phase.real))
        mm = np.diag([ph, 1 / ph]).astype(dt)
        out.append((h, n, a, mm))
    return out
