"""Limit cones, growth rates, tangent forms, norm-like orderings and the c_N constant.

Vectors in the Cartan subspace are handled in flat coordinates (all factors'
coordinates concatenated); the subspace itself is the set of vectors whose
per-factor sums vanish.  ``frame(spec)`` gives a fixed orthonormal basis of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull, QhullError

from .group import GroupSpec
from .invariants import CartanPoint


class DegenerateConeError(ValueError):
    pass


class InsufficientDataError(ValueError):
    def __init__(self, count: int, needed: int):
        super().__init__(f"only {count} samples available, need {needed}")
        self.count = count


class RangeError(ValueError):
    pass


class NotPositiveOnConeError(ValueError):
    pass


class InvalidIError(ValueError):
    pass


class ConvexityError(ValueError):
    pass


# ---------------------------------------------------------------- geometry


def frame(spec_or_dims: GroupSpec | Sequence[int]) -> np.ndarray:
    """Orthonormal basis (columns, flat coordinates) of the trace-zero subspace.

    Per factor of dimension d the Helmert vectors (1,..,1,-j,0,..)/norm are used,
    so a rank-one factor contributes (1,-1)/sqrt(2).
    """
    dims = [f.dimension for f in spec_or_dims.factors] if isinstance(spec_or_dims, GroupSpec) else list(spec_or_dims)
    total = sum(dims)
    cols = []
    off = 0
    for d in dims:
        for j in range(1, d):
            v = np.zeros(total)
            v[off:off + j] = 1.0
            v[off + j] = -j
            cols.append(v / np.linalg.norm(v))
        off += d
    return np.array(cols).T


@dataclass(frozen=True, eq=False)
class MuCensus:
    """Cartan projections of every reduced word up to some length.

    Counts in an ordering f are complete only below the smallest f-value among
    the longest words; ``cutoff(f)`` returns that threshold.
    """

    points: np.ndarray  # (N, flat)
    lengths: np.ndarray  # (N,)

    def cutoff(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        top = self.lengths == self.lengths.max()
        return float(np.min(f(self.points[top])))

    def __len__(self):
        return len(self.points)


def _euclid(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1)


def as_flat(samples) -> np.ndarray:
    if isinstance(samples, MuCensus):
        return samples.points
    if isinstance(samples, CartanPoint):
        return samples.flat[None]
    if len(samples) and isinstance(samples[0], CartanPoint):
        return np.array([s.flat for s in samples])
    return np.atleast_2d(np.asarray(samples, dtype=float))


@dataclass(frozen=True, eq=False)
class ConeHull:
    rays: np.ndarray  # (m, flat) unit vectors
    count: int
    angles: tuple[float, float] | None = None  # rank 2 only, in frame coordinates

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n == 0:
            return True
        u = v / n
        if len(self.rays) == 1:
            return bool(np.linalg.norm(u - self.rays[0]) <= tol)
        # nonnegative least squares membership
        from scipy.optimize import nnls

        coef, res = nnls(self.rays.T, u)
        return bool(res <= tol * 10 + 1e-12)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1)
    keep = n > 1e-300
    if not keep.any():
        raise DegenerateConeError("all samples are zero")
    return x[keep] / n[keep, None]


def cone_hull(samples, spec: GroupSpec | None = None, tol: float = 1e-10) -> ConeHull:
    x = as_flat(samples)
    if len(x) < 2:
        raise DegenerateConeError("need at least two samples")
    u = _unit_rows(x)
    if spec is not None:
        basis = frame(spec)
    else:
        # span of the samples, orthonormalized
        q, r = np.linalg.qr(u.T)
        basis = q[:, np.abs(np.diag(r)) > tol] if len(u) >= u.shape[1] else q
    y = u @ basis
    rank = basis.shape[1]
    mean = y.mean(axis=0)
    if np.linalg.norm(mean) < tol:
        raise DegenerateConeError("samples are not contained in an open half-space")
    mean /= np.linalg.norm(mean)
    spread = np.max(np.linalg.norm(y - mean, axis=1))
    if spread <= tol:
        return ConeHull(np.array([basis @ mean]), len(x))
    if rank == 1:
        return ConeHull(np.array([basis @ mean]), len(x))
    if rank == 2:
        perp = np.array([-mean[1], mean[0]])
        rel = np.arctan2(y @ perp, y @ mean)
        lo, hi = rel.min(), rel.max()
        base = np.arctan2(mean[1], mean[0])
        a0, a1 = base + lo, base + hi
        rays = np.array([basis @ [np.cos(a0), np.sin(a0)], basis @ [np.cos(a1), np.sin(a1)]])
        if hi - lo <= tol:
            rays = rays[:1]
        return ConeHull(rays, len(x), (float(a0), float(a1)))
    # rank >= 3: convex hull in the affine chart {<y, mean> = 1}
    chart_basis = np.linalg.svd(np.eye(rank) - np.outer(mean, mean))[0][:, : rank - 1]
    dots = y @ mean
    if np.any(dots <= tol):
        raise DegenerateConeError("samples are not contained in an open half-space")
    pts = (y / dots[:, None]) @ chart_basis
    try:
        hull = ConvexHull(pts)
        idx = hull.vertices
    except QhullError:
        # lower-dimensional configuration: fall back to extreme points along sample directions
        idx = np.unique(np.concatenate([np.argmax(pts @ d, keepdims=True) for d in np.vstack([pts, -pts])]))
    rays = []
    for i in idx:
        r = basis @ y[i]
        r /= np.linalg.norm(r)
        if all(np.linalg.norm(r - s) > 1e-9 for s in rays):
            rays.append(r)
    return ConeHull(np.array(rays), len(x))


# ---------------------------------------------------------------- forms and norms


@dataclass(frozen=True, eq=False)
class Normalization:
    delta: float
    direction: np.ndarray  # unit vector
    point: np.ndarray  # same ray, scaled so the normalized form is 1 there


@dataclass(frozen=True, eq=False)
class LinearForm:
    coefficients: np.ndarray
    normalization: Normalization | None = None

    def __call__(self, v) -> np.ndarray | float:
        if isinstance(v, CartanPoint):
            return float(v.flat @ np.asarray(self.coefficients, dtype=float))
        x = as_flat(v) if not isinstance(v, np.ndarray) else v
        return x @ np.asarray(self.coefficients, dtype=float)

    def scaled(self, s: float) -> "LinearForm":
        return LinearForm(np.asarray(self.coefficients, dtype=float) * s)


def simple_root(spec: GroupSpec, factor: int, i: int) -> LinearForm:
    """t_i - t_{i+1} on one factor, zero elsewhere."""
    c = np.zeros(spec.flat_dim)
    off = sum(f.dimension for f in spec.factors[:factor])
    c[off + i] = 1.0
    c[off + i + 1] = -1.0
    return LinearForm(c)


@dataclass(frozen=True, eq=False)
class NormLike:
    """Convex, degree-one homogeneous function on flat coordinates.

    ``kind`` is one of ``lp``, ``weighted``, ``linear`` or ``custom``.
    """

    name: str
    kind: str
    p: float = 2.0
    weights: np.ndarray | None = None
    form: LinearForm | None = None
    func: Callable[[np.ndarray], float] | None = None
    comparison: float | None = None  # registered constant C with psi <= C * N

    def __post_init__(self):
        if self.kind == "lp" and self.p < 1:
            raise ValueError("L^p needs p >= 1")
        if self.kind == "weighted" and (self.weights is None or np.any(np.asarray(self.weights) <= 0)):
            raise ValueError("weighted Euclidean needs positive weights")
        if self.kind == "linear" and self.form is None:
            raise ValueError("linear norm needs a form")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom norm needs a callable")
        if self.kind not in ("lp", "weighted", "linear", "custom"):
            raise ValueError(f"unknown norm kind {self.kind!r}")

    def value(self, w) -> np.ndarray | float:
        w = np.asarray(w, dtype=float)
        if self.kind == "lp":
            return np.sum(np.abs(w) ** self.p, axis=-1) ** (1 / self.p)
        if self.kind == "weighted":
            return np.sqrt(np.sum(np.asarray(self.weights) * w * w, axis=-1))
        if self.kind == "linear":
            return w @ np.asarray(self.form.coefficients, dtype=float)
        if w.ndim == 1:
            return float(self.func(w))
        return np.array([self.func(x) for x in w])

    __call__ = value

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.kind == "lp":
            n = self.value(w)
            return np.sign(w) * np.abs(w) ** (self.p - 1) * n ** (1 - self.p)
        if self.kind == "weighted":
            return np.asarray(self.weights) * w / self.value(w)
        if self.kind == "linear":
            return np.asarray(self.form.coefficients, dtype=float).copy()
        h = 1e-5
        return np.array([(self.value(w + h * e) - self.value(w - h * e)) / (2 * h) for e in np.eye(len(w))])

    def hessian(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        d = len(w)
        if self.kind == "lp":
            if self.p == 1:
                return np.zeros((d, d))
            if self.p < 2 and np.any(w == 0):
                raise ValueError("L^p Hessian is singular on coordinate hyperplanes for p < 2")
            n = self.value(w)
            g = self.gradient(w)
            return (self.p - 1) * (np.diag(np.abs(w) ** (self.p - 2)) * n ** (1 - self.p) - np.outer(g, g) / n)
        if self.kind == "weighted":
            n = self.value(w)
            ww = np.asarray(self.weights) * w
            return np.diag(np.asarray(self.weights, dtype=float)) / n - np.outer(ww, ww) / n**3
        if self.kind == "linear":
            return np.zeros((d, d))
        h = 1e-5
        eye = np.eye(d)
        hess = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                hess[i, j] = (
                    self.value(w + h * eye[i] + h * eye[j])
                    - self.value(w + h * eye[i] - h * eye[j])
                    - self.value(w - h * eye[i] + h * eye[j])
                    + self.value(w - h * eye[i] - h * eye[j])
                ) / (4 * h * h)
        return (hess + hess.T) / 2

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == "lp":
            out["p"] = self.p
        if self.kind == "weighted":
            out["weights"] = [float(x) for x in self.weights]
        if self.kind == "linear":
            out["coefficients"] = [float(x) for x in self.form.coefficients]
        if self.comparison is not None:
            out["comparison"] = self.comparison
        return out


def norm_from_dict(doc: dict) -> NormLike:
    kind = doc.get("kind", "lp")
    name = doc.get("name", kind)
    cmp_ = doc.get("comparison")
    if kind == "lp":
        return NormLike(name, "lp", p=float(doc.get("p", 2.0)), comparison=cmp_)
    if kind == "weighted":
        return NormLike(name, "weighted", weights=np.asarray(doc["weights"], dtype=float), comparison=cmp_)
    if kind == "linear":
        return NormLike(name, "linear", form=LinearForm(np.asarray(doc["coefficients"], dtype=float)), comparison=cmp_)
    raise ValueError(f"norm kind {kind!r} cannot be read from a document")


@dataclass(frozen=True, eq=False)
class QuadraticFormI:
    """Symmetric positive semidefinite form on ker(psi).

    ``basis`` holds the columns (flat coordinates) the matrix is written in;
    ``None`` means the deterministic orthonormal basis from ``kernel_basis``.
    """

    matrix: np.ndarray
    basis: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
            raise InvalidIError("I must be a symmetric square matrix")


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    window: tuple[float, float]
    residual: float
    model: str = "exp"
    intercept: float = 0.0


# ---------------------------------------------------------------- counting fits


def _count_grid(values: np.ndarray, window, points: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = window
    if not lo < hi:
        raise RangeError("empty window")
    vmin, vmax = float(values.min()), float(values.max())
    if lo < vmin or hi > vmax:
        raise RangeError(f"window ({lo}, {hi}) outside data range ({vmin}, {vmax})")
    t = np.linspace(lo, hi, points)
    counts = np.searchsorted(values, t, side="right").astype(float)
    if np.any(counts == 0):
        raise RangeError("window starts below the smallest value")
    return t, counts


def fit_exponential(t: np.ndarray, counts: np.ndarray) -> tuple[float, float, float]:
    """log N = c + delta t; returns (delta, c, rms residual)."""
    y = np.log(counts)
    a = np.column_stack([t, np.ones_like(t)])
    (delta, c), *_ = np.linalg.lstsq(a, y, rcond=None)
    r = y - a @ [delta, c]
    return float(delta), float(c), float(np.sqrt(np.mean(r * r)))


def fit_prime(t: np.ndarray, counts: np.ndarray) -> tuple[float, float, float]:
    """log N = c + delta t - log(delta t); returns (delta, c, rms residual)."""
    y = np.log(counts)

    def profile(d):
        r = y - (d * t - np.log(d * t))
        c = r.mean()
        return r - c, c

    def sse(d):
        r, _ = profile(d)
        return float(r @ r)

    d0, _, _ = fit_exponential(t, counts)
    # the pure slope underestimates by about 1/t; bracket generously
    lo = max(1e-9, 0.25 * abs(d0))
    hi = 4 * abs(d0) + 4 / max(t.min(), 1e-9)
    grid = np.geomspace(lo, hi, 200)
    best = grid[int(np.argmin([sse(d) for d in grid]))]
    res = minimize_scalar(sse, bounds=(best / 1.05, best * 1.05), method="bounded", options={"xatol": 1e-13 * best})
    d = float(res.x)
    r, c = profile(d)
    return d, float(c), float(np.sqrt(np.mean(r * r)))


def critical_exponent(values, window=None, model: str = "exp", points: int = 25, min_samples: int = 1000) -> ExponentEstimate:
    """Growth rate of N(t) = #{values <= t} over a window.

    ``model="exp"`` regresses log N on t.  ``model="prime"`` fits
    log N = c + delta t - log(delta t), the form followed by counts of
    primitive classes.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) < min_samples:
        raise InsufficientDataError(len(v), min_samples)
    if v[0] <= 0:
        raise ValueError("values must be positive")
    if window is None:
        window = (float(np.quantile(v, 0.05)), float(v[-1]))
    t, counts = _count_grid(v, window, points)
    if model == "exp":
        d, c, r = fit_exponential(t, counts)
    elif model == "prime":
        d, c, r = fit_prime(t, counts)
    else:
        raise ValueError(f"unknown model {model!r}")
    return ExponentEstimate(d, (float(window[0]), float(window[1])), r, model, c)


def growth_indicator(samples, direction, aperture: float, complete_below: float | None = None, min_samples: int = 100, points: int = 20) -> float:
    """Exponential growth rate of #{mu in cone(direction, aperture), |mu| <= t}, at the unit vector."""
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    x = as_flat(samples)
    if complete_below is None and isinstance(samples, MuCensus):
        complete_below = samples.cutoff(_euclid)
    w = np.asarray(direction, dtype=float)
    w = w / np.linalg.norm(w)
    n = np.linalg.norm(x, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.where(n > 0, (x @ w) / n, -1.0)
    inside = np.arccos(np.clip(cosang, -1, 1)) <= aperture
    r = np.sort(n[inside])
    if complete_below is not None:
        r = r[r <= complete_below]
    if len(r) < min_samples:
        raise InsufficientDataError(len(r), min_samples)
    lo, hi = r[0], r[-1]
    t = np.linspace((lo + hi) / 2, hi, points)
    counts = np.searchsorted(r, t, side="right").astype(float)
    slope, _, _ = fit_exponential(t, counts)
    return slope


# ---------------------------------------------------------------- tangency


def _check_positive(psi: LinearForm, hull: ConeHull) -> None:
    vals = hull.rays @ np.asarray(psi.coefficients, dtype=float)
    if np.any(vals <= 0):
        raise NotPositiveOnConeError(f"form is not positive on the limit cone (min {vals.min():.3e})")


def _ray_grid(hull: ConeHull, spec: GroupSpec | None, count: int) -> np.ndarray:
    if len(hull.rays) == 1:
        return hull.rays.copy()
    if hull.angles is not None and spec is not None:
        basis = frame(spec)
        a = np.linspace(hull.angles[0], hull.angles[1], count)
        return np.array([basis @ [np.cos(x), np.sin(x)] for x in a])
    # convex combinations of hull rays (simplex grid of pairs and the centroid)
    rays = [r for r in hull.rays]
    out = list(rays)
    m = len(rays)
    for i in range(m):
        for j in range(i + 1, m):
            for s in np.linspace(0.1, 0.9, 9):
                out.append(s * rays[i] + (1 - s) * rays[j])
    out.append(np.mean(rays, axis=0))
    out = np.array(out)
    return out / np.linalg.norm(out, axis=1)[:, None]


def densest_direction(
    samples, weight: Callable[[np.ndarray], float], hull: ConeHull, spec: GroupSpec | None = None,
    aperture: float | None = None, complete_below: float | None = None, grid: int = 21,
) -> np.ndarray:
    """Unit ray maximizing growth_indicator(r) / weight(r) over a grid on the hull.

    In rank two the grid maximum is refined by golden-section search over the
    boundary angle.
    """
    rays = _ray_grid(hull, spec, grid)
    if len(rays) == 1:
        return rays[0]
    if aperture is None:
        if hull.angles is not None:
            aperture = max((hull.angles[1] - hull.angles[0]) / 8, 1e-3)
        else:
            aperture = 0.1

    def score(r):
        try:
            return growth_indicator(samples, r, aperture, complete_below) / weight(r)
        except InsufficientDataError:
            return -np.inf

    scores = np.array([score(r) for r in rays])
    if not np.isfinite(scores).any():
        raise InsufficientDataError(0, 100)
    best = int(np.argmax(scores))
    if hull.angles is not None and spec is not None:
        basis = frame(spec)
        a = np.linspace(hull.angles[0], hull.angles[1], len(rays))
        lo = a[max(best - 1, 0)]
        hi = a[min(best + 1, len(a) - 1)]
        res = minimize_scalar(
            lambda x: -score(basis @ [np.cos(x), np.sin(x)]), bounds=(lo, hi), method="bounded", options={"xatol": 1e-4}
        )
        if -res.fun >= scores[best]:
            return basis @ [np.cos(res.x), np.sin(res.x)]
    return rays[best]


def _complete_window(samples, vals: np.ndarray, f, window, complete_below):
    if window is not None:
        return window
    if complete_below is None and isinstance(samples, MuCensus):
        complete_below = samples.cutoff(f)
    if complete_below is None:
        return None
    lo = float(np.quantile(vals[vals <= complete_below], 0.5))
    return (lo, complete_below)


def normalize_tangent(
    psi: LinearForm, mu_samples, spec: GroupSpec | None = None, window=None, complete_below: float | None = None,
    hull: ConeHull | None = None,
) -> LinearForm:
    """Scale psi by its critical exponent and record the tangency direction.

    The exponent is fitted on the upper half of the complete range of psi(mu).
    """
    x = as_flat(mu_samples)
    hull = cone_hull(x, spec) if hull is None else hull
    _check_positive(psi, hull)
    vals = psi(x)
    window = _complete_window(mu_samples, vals, psi, window, complete_below)
    est = critical_exponent(vals, window)
    coeffs = np.asarray(psi.coefficients, dtype=float) * est.value
    form = LinearForm(coeffs)
    direction = densest_direction(mu_samples, lambda r: float(form(r)), hull, spec)
    direction = direction / np.linalg.norm(direction)
    point = direction / float(form(direction))
    return LinearForm(coeffs, Normalization(est.value, direction, point))


def delta_N(norm: NormLike, mu_samples, spec: GroupSpec | None = None, window=None, complete_below: float | None = None,
            hull: ConeHull | None = None) -> tuple[ExponentEstimate, np.ndarray]:
    """Exponent of the N-ordered count and the densest direction, scaled to N = 1."""
    x = as_flat(mu_samples)
    hull = cone_hull(x, spec) if hull is None else hull
    if np.any(norm.value(hull.rays) <= 0):
        raise NotPositiveOnConeError("norm-like function is not positive on the limit cone")
    vals = norm.value(x)
    window = _complete_window(mu_samples, vals, norm.value, window, complete_below)
    est = critical_exponent(vals, window)
    direction = densest_direction(mu_samples, lambda r: float(norm.value(r)), hull, spec)
    return est, direction / float(norm.value(direction))


# ---------------------------------------------------------------- c_N


def kernel_basis(psi: LinearForm, spec_or_dims: GroupSpec | Sequence[int]) -> np.ndarray:
    """Orthonormal basis (columns) of ker(psi) inside the Cartan subspace.

    Gram-Schmidt over the coordinate vectors after projecting onto the
    subspace and off the coefficient vector; deterministic.
    """
    a = frame(spec_or_dims)
    proj_a = a @ a.T
    c = proj_a @ np.asarray(psi.coefficients, dtype=float)
    if np.linalg.norm(c) == 0:
        raise ValueError("form vanishes on the Cartan subspace")
    c = c / np.linalg.norm(c)
    proj = proj_a - np.outer(c, c)
    basis: list[np.ndarray] = []
    for e in np.eye(a.shape[0]):
        v = proj @ e
        for b in basis:
            v = v - (b @ v) * b
        n = np.linalg.norm(v)
        if n > 1e-8:
            basis.append(v / n)
        if len(basis) == a.shape[1] - 1:
            break
    return np.array(basis).T.reshape(a.shape[0], len(basis))


@dataclass(frozen=True, eq=False)
class CConstant:
    value: float
    monte_carlo: float | None
    a_i: np.ndarray
    a_q: np.ndarray
    basis: np.ndarray = field(repr=False, default=None)


def gaussian_ratio(a_i: np.ndarray, a_q: np.ndarray, tol: float = 1e-12) -> float:
    """sqrt(det A_I / det(A_I + A_Q)), the ratio of the two Gaussian integrals."""
    a_i = np.atleast_2d(np.asarray(a_i, dtype=float))
    a_q = np.atleast_2d(np.asarray(a_q, dtype=float))
    if a_i.size == 0:
        return 1.0
    if np.linalg.norm(a_q) <= tol:
        return 1.0
    # Cholesky-whitened form keeps the ratio in (0, 1] without cancellation
    chol = np.linalg.cholesky(a_i)
    inv = np.linalg.inv(chol)
    w = inv @ a_q @ inv.T
    ev = np.linalg.eigvalsh((w + w.T) / 2)
    return float(np.prod(1 / np.sqrt(1 + np.clip(ev, 0, None))))


def gaussian_ratio_mc(a_i: np.ndarray, a_q: np.ndarray, samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte Carlo estimate of the same ratio: E[exp(-u^T A_Q u)] for u ~ exp(-u^T A_I u)."""
    a_i = np.atleast_2d(np.asarray(a_i, dtype=float))
    a_q = np.atleast_2d(np.asarray(a_q, dtype=float))
    rng = np.random.default_rng(seed)
    cov = np.linalg.inv(2 * a_i)
    u = rng.multivariate_normal(np.zeros(len(a_i)), cov, size=samples, method="cholesky")
    q = np.einsum("ni,ij,nj->n", u, a_q, u)
    return float(np.mean(np.exp(-q)))


def c_constant(
    qform: QuadraticFormI, norm: NormLike, delta: float, v, psi: LinearForm, spec_or_dims,
    mc_samples: int | None = 1_000_000, seed: int = 0, tol: float = 1e-10,
) -> CConstant:
    """Correction constant of the norm ordering relative to the linear one."""
    basis = kernel_basis(psi, spec_or_dims)
    a_i = np.asarray(qform.matrix, dtype=float)
    if qform.basis is not None:
        change = np.linalg.pinv(np.asarray(qform.basis, dtype=float)) @ basis
        a_i = change.T @ a_i @ change
    if a_i.shape != (basis.shape[1], basis.shape[1]):
        raise InvalidIError(f"I has shape {a_i.shape}, kernel has dimension {basis.shape[1]}")
    ev_i = np.linalg.eigvalsh(a_i) if a_i.size else np.array([1.0])
    if np.any(ev_i <= tol):
        raise InvalidIError(f"I is not positive definite (min eigenvalue {ev_i.min():.3e})")
    hess = norm.hessian(delta * np.asarray(v, dtype=float))
    a_q = (delta**2 / 2) * basis.T @ hess @ basis
    a_q = (a_q + a_q.T) / 2
    ev_q = np.linalg.eigvalsh(a_q) if a_q.size else np.array([0.0])
    if np.any(ev_q < -max(tol, 1e-8 * max(1.0, np.abs(ev_q).max()))):
        raise ConvexityError(f"Hessian has a negative eigenvalue {ev_q.min():.3e} on ker(psi)")
    value = gaussian_ratio(a_i, a_q, tol)
    mc = gaussian_ratio_mc(a_i, a_q, mc_samples, seed) if mc_samples and a_i.size else None
    return CConstant(value, mc, a_i, a_q, basis)
