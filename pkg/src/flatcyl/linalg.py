"""Small dense linear algebra used by the spectral invariants.

Everything here works on stacks of tiny matrices (d <= 8 or so).  Singular
values come from a batched one-sided Jacobi sweep, eigenvalues from the
characteristic polynomial for d <= 4 and from a Hessenberg/shifted-QR loop
otherwise.
"""

from __future__ import annotations

import numpy as np


class ConvergenceError(ArithmeticError):
    def __init__(self, what: str, residual: float):
        super().__init__(f"{what} did not converge (residual {residual:.3e})")
        self.residual = residual


def jacobi_singular_values(mats: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> np.ndarray:
    """Singular values of a stack of square matrices, descending.

    One-sided (Hestenes) Jacobi: rotate column pairs until they are mutually
    orthogonal; the column norms are then the singular values.
    """
    a = np.array(mats, dtype=complex if np.iscomplexobj(mats) else float, copy=True)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    d = a.shape[-1]
    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                ap = a[..., :, p]
                aq = a[..., :, q]
                alpha = np.sum(np.abs(ap) ** 2, axis=-1)
                beta = np.sum(np.abs(aq) ** 2, axis=-1)
                gamma = np.sum(np.conj(ap) * aq, axis=-1)
                g = np.abs(gamma)
                scale = np.sqrt(alpha * beta)
                with np.errstate(invalid="ignore", divide="ignore"):
                    rel = np.where(scale > 0, g / scale, 0.0)
                off = max(off, float(rel.max(initial=0.0)))
                act = rel > tol
                if not act.any():
                    continue
                gs = np.where(act, g, 1.0)
                phase = np.where(act, np.conj(gamma) / gs, 1.0)
                zeta = (beta - alpha) / (2 * gs)
                t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(zeta == 0, 1.0, t)
                c = 1 / np.sqrt(1 + t * t)
                s = c * t
                c = np.where(act, c, 1.0)
                s = np.where(act, s, 0.0)
                aq2 = aq * phase[..., None]
                new_p = c[..., None] * ap - s[..., None] * aq2
                new_q = s[..., None] * ap + c[..., None] * aq2
                a[..., :, p] = new_p
                a[..., :, q] = new_q
        if off <= tol:
            break
    else:
        raise ConvergenceError("Jacobi SVD", off)
    sv = np.sqrt(np.sum(np.abs(a) ** 2, axis=-2))
    sv = -np.sort(-sv, axis=-1)
    return sv[0] if squeeze else sv


def charpoly(m: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial coefficients, highest degree first (Faddeev-LeVerrier)."""
    d = m.shape[0]
    coeffs = [1.0 + 0j]
    acc = np.zeros_like(m, dtype=complex)
    eye = np.eye(d)
    for k in range(1, d + 1):
        acc = m @ acc + coeffs[-1] * eye
        coeffs.append(-np.trace(m @ acc) / k)
    return np.array(coeffs)


def _horner(coeffs: np.ndarray, z):
    p = np.zeros_like(z, dtype=complex) + coeffs[0]
    dp = np.zeros_like(p)
    for c in coeffs[1:]:
        dp = dp * z + p
        p = p * z + c
    return p, dp


def poly_roots(coeffs: np.ndarray, tol: float = 1e-15, max_iter: int = 500) -> np.ndarray:
    """All complex roots of a polynomial (Aberth-Ehrlich, then Newton polishing)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    coeffs = coeffs / coeffs[0]
    n = len(coeffs) - 1
    if n == 1:
        return np.array([-coeffs[1]])
    if n == 2:
        b, c = coeffs[1], coeffs[2]
        disc = np.sqrt(b * b - 4 * c)
        q = -(b + disc) / 2 if abs(b + disc) >= abs(b - disc) else -(b - disc) / 2
        if q == 0:
            return np.array([0j, 0j])
        return np.array([q, c / q])
    radius = 1 + np.max(np.abs(coeffs[1:]))
    # Fujiwara-style scale for a tighter start
    radius = min(radius, 2 * max(abs(coeffs[k]) ** (1 / k) for k in range(1, n + 1)))
    z = radius * np.exp(1j * (2 * np.pi * np.arange(n) / n + 0.4))
    for _ in range(max_iter):
        p, dp = _horner(coeffs, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dp != 0, p / dp, 0)
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, 1)
            inv = 1 / diff
            np.fill_diagonal(inv, 0)
            corr = ratio / (1 - ratio * inv.sum(axis=1))
        corr = np.nan_to_num(corr)
        z = z - corr
        if np.all(np.abs(corr) <= tol * np.maximum(np.abs(z), 1e-300)):
            break
    for _ in range(3):
        p, dp = _horner(coeffs, z)
        ok = dp != 0
        z = np.where(ok, z - np.where(ok, p / np.where(ok, dp, 1), 0), z)
    return z


def hessenberg(m: np.ndarray) -> np.ndarray:
    """Upper Hessenberg form via Householder reflections (similarity)."""
    h = np.array(m, dtype=complex, copy=True)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0:
            continue
        ph = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += ph * alpha
        v /= np.linalg.norm(v)
        h[k + 1:, :] -= 2 * np.outer(v, np.conj(v) @ h[k + 1:, :])
        h[:, k + 1:] -= 2 * np.outer(h[:, k + 1:] @ v, np.conj(v))
    return h


def qr_eigenvalues(m: np.ndarray, tol: float = 1e-14, max_iter: int = 10000) -> np.ndarray:
    """Eigenvalues by complex shifted QR on the Hessenberg form, with deflation."""
    h = hessenberg(m)
    n = h.shape[0]
    out = []
    hi = n
    it = 0
    while hi > 0:
        if hi == 1:
            out.append(h[0, 0])
            break
        # look for a negligible subdiagonal entry
        lo = hi - 1
        while lo > 0 and abs(h[lo, lo - 1]) > tol * (abs(h[lo, lo]) + abs(h[lo - 1, lo - 1])):
            lo -= 1
        if lo == hi - 1:
            out.append(h[hi - 1, hi - 1])
            hi -= 1
            it = 0
            continue
        it += 1
        if it > max_iter:
            raise ConvergenceError("shifted QR", float(abs(h[hi - 1, hi - 2])))
        a, b = h[hi - 2, hi - 2], h[hi - 2, hi - 1]
        c, d = h[hi - 1, hi - 2], h[hi - 1, hi - 1]
        tr, det = a + d, a * d - b * c
        disc = np.sqrt(tr * tr / 4 - det)
        mu1, mu2 = tr / 2 + disc, tr / 2 - disc
        shift = mu1 if abs(mu1 - d) < abs(mu2 - d) else mu2
        if it % 11 == 0:  # exceptional shift
            shift = d + abs(h[hi - 1, hi - 2])
        blk = h[lo:hi, lo:hi] - shift * np.eye(hi - lo)
        # Givens QR of the active block, then RQ
        size = hi - lo
        rots = []
        for k in range(size - 1):
            x, y = blk[k, k], blk[k + 1, k]
            r = np.hypot(abs(x), abs(y))
            if r == 0:
                cs, sn = 1.0, 0.0
            else:
                cs, sn = x / r, y / r
            g = np.array([[np.conj(cs), np.conj(sn)], [-sn, cs]])
            blk[k:k + 2, :] = g @ blk[k:k + 2, :]
            rots.append(g)
        for k, g in enumerate(rots):
            blk[:, k:k + 2] = blk[:, k:k + 2] @ np.conj(g.T)
        h[lo:hi, lo:hi] = blk + shift * np.eye(size)
    return np.array(out)


def _det(m: np.ndarray):
    return np.linalg.det(m)


def adjugate(m: np.ndarray) -> np.ndarray:
    """Classical adjugate from cofactors (well defined even when m is numerically singular)."""
    d = m.shape[0]
    adj = np.empty_like(m, dtype=np.result_type(m, float))
    for i in range(d):
        for j in range(d):
            minor = np.delete(np.delete(m, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return adj


def adjugate_batch(stack: np.ndarray) -> np.ndarray:
    """Adjugates of an (..., d, d) stack."""
    stack = np.asarray(stack)
    d = stack.shape[-1]
    adj = np.empty(stack.shape, dtype=np.result_type(stack, float))
    if d == 1:
        adj[...] = 1
        return adj
    for i in range(d):
        rows = [r for r in range(d) if r != i]
        for j in range(d):
            cols = [c for c in range(d) if c != j]
            adj[..., j, i] = (-1) ** (i + j) * np.linalg.det(stack[..., rows, :][..., :, cols])
    return adj


def eigenvalues(m: np.ndarray, unimodular: bool = False) -> np.ndarray:
    """Eigenvalues of a small invertible matrix, sorted by decreasing modulus.

    With ``unimodular`` the determinant is taken to be 1, so the adjugate is the
    inverse; this keeps the small eigenvalues of long products usable.
    """
    m = np.asarray(m)
    d = m.shape[0]
    if d <= 4:
        big = poly_roots(charpoly(m))
        if d > 2:
            # small roots are better conditioned as reciprocals of the inverse's roots
            inv = adjugate(m) if unimodular else adjugate(m) / _det(m)
            with np.errstate(divide="ignore", invalid="ignore"):
                small = 1 / poly_roots(charpoly(inv))
            big = big[np.argsort(-np.abs(big))]
            small = small[np.argsort(-np.abs(small))]
            ev = np.where(np.abs(big) >= 1, big, small)
        else:
            ev = big
    else:
        ev = qr_eigenvalues(m)
    ev = ev[np.argsort(-np.abs(ev), kind="stable")]
    scale = max(np.abs(m).max(), 1.0)
    resid = min_singular_residual(m, ev)
    if not np.isfinite(resid) or resid > 1e-6 * scale:
        raise ConvergenceError("eigenvalue computation", resid)
    return ev


def min_singular_residual(m: np.ndarray, ev: np.ndarray) -> float:
    """max over eigenvalues of |det(m - z I)| scaled into a backward-error-like quantity."""
    d = m.shape[0]
    worst = 0.0
    for z in ev:
        sv = jacobi_singular_values(m - z * np.eye(d), tol=1e-12)
        worst = max(worst, float(sv[-1]) / max(1.0, abs(z)))
    return worst
