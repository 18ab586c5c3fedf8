"""Flow boxes and a numerical check of the effective closing lemma on products of SL_2 factors.

Conventions follow the cell coordinates in ``invariants``: N is upper
unipotent, N+ lower unipotent, A positive diagonal, M unit-modulus diagonal
(or +-I on real factors).  Per factor the box coordinates of u = g0^-1 g are

* y: the N+ entry of u in N+ N A M order,
* x': the N entry of the N+N part of u, re-read in N N+ A M order,
* t: log a, and phi: the angle of m, both from the N+ N A M order.

Norms across factors are Euclidean; t and phi are measured in the Lie
algebra (so diag(t, -t) has norm sqrt(2)|t|), which makes the A-slice of a
box a Euclidean ball in flat coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .group import ConfigError, GroupSpec, Word, evaluate_word
from .invariants import (
    DecompositionError,
    axis_matrix,
    diag_am,
    eigenflags,
    is_loxodromic,
    jordan,
    lower,
    namn_coords,
    nnam_coords,
    sl2_eigenvalues,
    upper,
)

log = logging.getLogger(__name__)

EPS_CEILING = 0.05
SQRT2 = np.sqrt(2.0)


class InapplicableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowBoxSpec:
    g0: tuple[np.ndarray, ...]
    epsilon: float
    ceiling: float = EPS_CEILING

    def __post_init__(self):
        if not 0 < self.epsilon <= self.ceiling:
            raise ConfigError(f"epsilon {self.epsilon} outside (0, {self.ceiling}]")


@dataclass(frozen=True)
class BoxCoordinates:
    y: np.ndarray  # per factor, complex
    x: np.ndarray
    t: np.ndarray
    phi: np.ndarray
    sign_ok: bool  # real factors: the M part is +I

    @property
    def radius(self) -> float:
        if not self.sign_ok:
            return np.inf
        return float(max(
            np.linalg.norm(self.y), np.linalg.norm(self.x), SQRT2 * np.linalg.norm(self.t), SQRT2 * np.linalg.norm(self.phi)
        ))


@dataclass(frozen=True)
class Membership:
    inside: bool
    radius: float
    reason: str | None = None

    def __bool__(self):
        return self.inside


def _require_sl2(spec: GroupSpec) -> None:
    if any(f.dimension != 2 for f in spec.factors):
        raise ConfigError("flow boxes need every factor to be SL_2")


def box_coordinates(u: Sequence[np.ndarray], tol: float = 1e-12) -> BoxCoordinates:
    """Coordinates of u (already translated by g0^-1)."""
    ys, xs, ts, ps = [], [], [], []
    sign_ok = True
    for m in u:
        m = np.asarray(m)
        c = namn_coords(m, tol)
        k = lower(c.y) @ upper(c.x)
        c2 = nnam_coords(k, tol)
        ys.append(c.y)
        xs.append(c2.x)
        ts.append(c.t)
        if np.isrealobj(m):
            sign_ok &= c.phase.real > 0
            ps.append(0.0)
        else:
            ps.append(float(np.angle(c.phase)))
    return BoxCoordinates(np.array(ys), np.array(xs), np.array(ts), np.array(ps), bool(sign_ok))


def _inv2(m: np.ndarray) -> np.ndarray:
    # exact inverse of a unimodular 2x2 matrix
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])


def box_radius(box: FlowBoxSpec, g: Sequence[np.ndarray]) -> float:
    u = [_inv2(np.asarray(b)) @ np.asarray(m) for b, m in zip(box.g0, g)]
    return box_coordinates(u).radius


def flow_box_membership(box: FlowBoxSpec, g: Sequence[np.ndarray]) -> Membership:
    """Whether g lies in the epsilon-flow box at g0."""
    try:
        r = box_radius(box, g)
    except DecompositionError as exc:
        return Membership(False, np.inf, f"decomposition failed: {exc}")
    if not np.isfinite(r):
        return Membership(False, r, "M part has the wrong sign")
    return Membership(bool(r < box.epsilon), r)


def exp_cartan(w: Sequence[float], phases: Sequence[float] | None = None, complex_factors: Sequence[bool] | None = None):
    """exp of (t_f, -t_f) per factor, optionally times exp(i phi_f) in M."""
    w = np.asarray(w, dtype=float)
    phases = np.zeros(len(w)) if phases is None else np.asarray(phases, dtype=float)
    cplx = [True] * len(w) if complex_factors is None else list(complex_factors)
    out = []
    for t, ph, c in zip(w, phases, cplx):
        m = diag_am(float(t), np.exp(1j * ph))
        out.append(m if c else m.real)
    return tuple(out)


# ---------------------------------------------------------------- closing experiment


@dataclass(frozen=True)
class ClosingReport:
    epsilon: float
    power: int
    T: float
    dist_a: float
    dist_m: float
    box_displacement: float
    success: bool = False

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "power": self.power, "T": self.T, "dist_a": self.dist_a,
            "dist_m": self.dist_m, "box_displacement": self.box_displacement, "success": self.success,
        }


@dataclass(frozen=True)
class ClosingFits:
    slope: float  # median dist_a per unit epsilon, through the origin
    r2: float
    slope_m: float
    spearman: float  # min over epsilon of rank correlation of (displacement - eps) with e^{-T}
    constant: float  # C in the success test dist <= C eps
    t_threshold: float | None = None  # smallest grid T from which every trial succeeds

    def to_dict(self) -> dict:
        return {"slope": self.slope, "r2": self.r2, "slope_m": self.slope_m, "spearman": self.spearman,
                "C": self.constant, "T_threshold": self.t_threshold}


@dataclass(eq=False)
class ClosingRun:
    reports: list[ClosingReport]
    skipped: list[tuple[float, int, int, str]] = field(default_factory=list)  # (eps, power, trial, reason)
    fits: ClosingFits | None = None


def _ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    if dim == 0 or radius == 0:
        return np.zeros(dim)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1 / dim)


def _sample_coords(rng, cplx: Sequence[bool], radius: float):
    """Per-factor complex (or real) coordinate vector uniform in a Euclidean ball."""
    dims = [2 if c else 1 for c in cplx]
    flat = _ball(rng, sum(dims), radius)
    out, i = [], 0
    for c in cplx:
        out.append(complex(flat[i], flat[i + 1]) if c else complex(flat[i]))
        i += 2 if c else 1
    return np.array(out)


def _solve_w(A: complex, y2: complex, x1: complex) -> complex:
    # smallest root of y2 w^2 + A w - x1 = 0
    disc = np.sqrt(A * A + 4 * y2 * x1 + 0j)
    if (np.conj(A) * disc).real < 0:
        disc = -disc
    den = A + disc
    if den == 0:
        raise DecompositionError("closing relation has no small solution")
    return 2 * x1 / den


def _as_factor(m: np.ndarray, cplx: bool) -> np.ndarray:
    if cplx:
        return m.astype(complex)
    if np.abs(m.imag).max() > 1e-12 * max(1.0, np.abs(m).max()):
        raise DecompositionError("real factor picked up an imaginary part")
    return m.real


def flags_in_box(box: FlowBoxSpec, gamma: Sequence[np.ndarray], spec: GroupSpec) -> bool:
    """Attracting line of gamma in g0 N+_eps e1 and repelling line in g0 N_eps e2."""
    fl = eigenflags(spec, gamma)
    ys, xs = [], []
    for b, vp, vm in zip(box.g0, fl.attracting, fl.repelling):
        bi = _inv2(np.asarray(b, dtype=complex))
        p, q = bi @ vp, bi @ vm
        if abs(p[0]) < 1e-300 or abs(q[1]) < 1e-300:
            return False
        ys.append(p[1] / p[0])
        xs.append(q[0] / q[1])
    return bool(np.linalg.norm(ys) < box.epsilon and np.linalg.norm(xs) < box.epsilon)


def _one_trial(spec: GroupSpec, gamma, box: FlowBoxSpec, rng, spread: float):
    cplx = [f.is_complex for f in spec.factors]
    eps = box.epsilon
    nf = len(cplx)
    r = eps * spread
    x1 = _sample_coords(rng, cplx, r)  # N entry of g1
    y2 = _sample_coords(rng, cplx, r)  # N+ entry of g2
    t1, t2 = _ball(rng, nf, r / SQRT2), _ball(rng, nf, r / SQRT2)
    nc = sum(cplx)
    p1, p2 = np.zeros(nf), np.zeros(nf)
    p1[np.array(cplx, bool)] = _ball(rng, nc, r / SQRT2)
    p2[np.array(cplx, bool)] = _ball(rng, nc, r / SQRT2)

    u1, u2, g3, am_tilde = [], [], [], []
    for f in range(nf):
        b = np.asarray(box.g0[f], dtype=complex)
        G = _inv2(b) @ np.asarray(gamma[f], dtype=complex) @ b
        A, B = G[0, 0], G[0, 1]
        w = _solve_w(A, y2[f], x1[f])
        z = (w - B) / A  # N entry of g2 (N N+ A M order)
        am2 = diag_am(t2[f], np.exp(1j * p2[f]))
        v2 = upper(z) @ lower(y2[f]) @ am2
        P = G @ v2
        c = namn_coords(P)
        am1 = diag_am(t1[f], np.exp(1j * p1[f]))
        v1 = lower(c.y) @ upper(c.x) @ am1
        am_tilde.append(np.linalg.inv(am1) @ diag_am(c.t, c.phase))
        # g3: the single element of h1 N cap n2 N+ A M
        yh = c.y
        xg = z / (1 - z * yh)
        g3.append(lower(yh) @ upper(xg))
        u1.append(_as_factor(v1, cplx[f]))
        u2.append(_as_factor(v2, cplx[f]))
    return u1, u2, g3, am_tilde


def closing_trial(spec: GroupSpec, gamma: Sequence[np.ndarray], box: FlowBoxSpec, rng: np.random.Generator,
                  power: int = 1, spread: float = 1.0) -> ClosingReport:
    """One sampled near-closing segment and the closed orbit it shadows.

    g1 = g0 u1 and g2 = g0 u2 are drawn in the box so that g1 a~ m~ = gamma g2
    holds exactly: the N entry of g1, the N+ entry of g2 and both AM parts are
    sampled, the remaining two entries are solved for.
    """
    u1, u2, g3, am_t = _one_trial(spec, gamma, box, rng, spread)
    for name, u in (("g1", u1), ("g2", u2)):
        r = box_coordinates(u).radius
        if not r < box.epsilon:
            raise InapplicableError(f"{name} left the box (radius {r:.3e})")
    t_tilde = np.array([np.log(abs(m[0, 0])) for m in am_t])
    ph_tilde = np.array([np.angle(m[0, 0] / m[1, 1]) for m in am_t])
    T = float(2 * t_tilde.min())

    # exact axis point of gamma near the box, g = g0 g3 h_x n_y
    axis = axis_matrix(spec, gamma)
    disp_u = []
    for f, fac in enumerate(spec.factors):
        g4 = np.asarray(box.g0[f], dtype=complex) @ g3[f]
        c = namn_coords(_inv2(g4) @ np.asarray(axis[f], dtype=complex))
        disp_u.append(_as_factor(g3[f] @ lower(c.y) @ upper(c.x), fac.is_complex))
    disp = box_coordinates(disp_u).radius

    lam = jordan(spec, gamma)
    dist_a = float(np.sqrt(sum(2 * (p[0] - t) ** 2 for p, t in zip(lam.parts, t_tilde))))
    dm = []
    for f, fac in enumerate(spec.factors):
        l1, l2 = sl2_eigenvalues(np.asarray(gamma[f])[None])
        if fac.is_complex:
            d = np.angle(np.exp(1j * (np.angle(l1[0] / l2[0]) - ph_tilde[f])))
            dm.append(float(abs(d)))
        else:
            same = np.sign(l1[0].real) == np.sign(am_t[f][0, 0].real)
            dm.append(0.0 if same else np.inf)
    dist_m = float(np.linalg.norm(dm))
    return ClosingReport(box.epsilon, power, T, dist_a, dist_m, disp)


def power_for(spec: GroupSpec, gamma: Sequence[np.ndarray], T: float) -> int:
    """Power k with k * min_alpha(lambda(gamma)) closest to T (at least 1)."""
    lam = jordan(spec, gamma)
    alpha = min(float(p[0] - p[1]) for p in lam.parts)
    return max(1, int(round(T / alpha)))


def _through_origin(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope = float(x @ y / (x @ x))
    res = y - slope * x
    tot = y - y.mean()
    r2 = 1 - float(res @ res) / float(tot @ tot) if tot @ tot > 0 else (1.0 if res @ res == 0 else 0.0)
    return slope, r2


def fit_closing(reports: Sequence[ClosingReport]) -> ClosingFits:
    eps = sorted({r.epsilon for r in reports})
    med_a = np.array([np.median([r.dist_a for r in reports if r.epsilon == e]) for e in eps])
    med_m = np.array([np.median([r.dist_m for r in reports if r.epsilon == e]) for e in eps])
    e = np.array(eps)
    slope, r2 = _through_origin(e, med_a)
    slope_m, _ = _through_origin(e, med_m)
    rhos = []
    for ev in eps:
        sub = [r for r in reports if r.epsilon == ev]
        if len({r.T for r in sub}) < 2:
            continue
        rho = spearmanr([r.box_displacement - ev for r in sub], [np.exp(-r.T) for r in sub]).statistic
        rhos.append(float(rho))
    spear = min(rhos) if rhos else float("nan")
    C = 2 * max(slope, slope_m, 0.0)
    return ClosingFits(slope, r2, slope_m, spear, C)


def closing_experiment(
    spec: GroupSpec, gamma: Sequence[np.ndarray] | Word, epsilons: Sequence[float], T_grid: Sequence[float] | None = None,
    trials: int = 20, seed: int = 0, g0: Sequence[np.ndarray] | None = None, spread: float = 1.0,
) -> ClosingRun:
    """Near-closing segments for gamma^k over a grid of epsilons and target T values.

    The box base defaults to the axis matrix of gamma, so the box is centred
    on the closed orbit being shadowed.  Trial j uses the same random stream
    for every (epsilon, T) pair; differences between grid points are then
    not sampling noise.
    """
    _require_sl2(spec)
    if isinstance(gamma, Word) or (len(gamma) and np.ndim(gamma[0]) == 0):
        gamma = evaluate_word(spec, gamma)
    gamma = tuple(np.asarray(m) for m in gamma)
    if not is_loxodromic(spec, gamma):
        raise InapplicableError("gamma is not loxodromic")
    base = tuple(np.asarray(m) for m in (axis_matrix(spec, gamma) if g0 is None else g0))
    powers = [1] if T_grid is None else [power_for(spec, gamma, T) for T in T_grid]
    reports, skipped = [], []
    for eps in epsilons:
        box = FlowBoxSpec(base, float(eps))
        if not flags_in_box(box, gamma, spec):
            raise InapplicableError("flags of gamma are outside the box's flag neighbourhoods")
        for k in powers:
            gk = tuple(np.linalg.matrix_power(m, k) for m in gamma)
            for j in range(trials):
                rng = np.random.default_rng([seed, j])
                try:
                    reports.append(closing_trial(spec, gk, box, rng, k, spread))
                except (InapplicableError, DecompositionError) as exc:
                    skipped.append((float(eps), k, j, str(exc)))
    if skipped:
        log.info("%d closing trials skipped", len(skipped))
    fits = fit_closing(reports) if len({r.epsilon for r in reports}) >= 1 and reports else None
    if fits is not None:
        reports = [
            ClosingReport(r.epsilon, r.power, r.T, r.dist_a, r.dist_m, r.box_displacement,
                          bool(r.dist_a <= fits.constant * r.epsilon and r.dist_m <= fits.constant * r.epsilon))
            for r in reports
        ]
        fits = replace(fits, t_threshold=empirical_threshold(reports))
    return ClosingRun(reports, skipped, fits)


def empirical_threshold(reports: Sequence[ClosingReport]) -> float | None:
    """Smallest T such that all trials at T and above succeeded; the lemma's T_0 is not explicit."""
    Ts = sorted({r.T for r in reports})
    ok = {T: all(r.success for r in reports if r.T == T) for T in Ts}
    out = None
    for T in reversed(Ts):
        if not ok[T]:
            break
        out = T
    return out
