"""Riemannian distance between two chart points.

Two solvers are provided.

``quadrature``
    The cometric depends on a single coordinate ``x_c``, so every other
    covector component is conserved along a geodesic.  Writing
    ``u = sum_{j != c} xi_j^2`` and ``S = sum_pairs xi_a xi_b``, the unit
    speed condition gives ``xi_c(s) = sqrt(1 - u - 2 S alpha(s))`` as a
    function of ``s = x_c``.  While ``x_c`` is monotone the displacement of
    each coordinate is an integral in ``s``:

        dx_j = xi_j I0 + xi_partner(j) I1,   I0 = int ds / xi_c,
                                             I1 = int alpha ds / xi_c,

    and the length equals ``I0``.  Matching the displacements is a two
    unknown Newton problem in ``(u, S)``, solved in batch with
    Gauss-Legendre quadrature.

``shooting``
    Damped Newton on the initial velocity, integrating the Hamilton flow
    with RK4.  Used when ``x_c`` is not monotone along the connecting
    geodesic (for instance when both points share the same ``x_c``).

``dist`` picks the quadrature solver when it applies and falls back to
shooting otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coverage import counted
from .errors import AmbiguityError, ConvergenceError, DomainError, TruncationError
from .geodesic_flow import DEFAULT_STEP, integrate
from .metric_core import MetricPatch

MIN_SEPARATION = 1e-6
GAUSS_NODES = 64
_GL = np.polynomial.legendre.leggauss(GAUSS_NODES)


@dataclass(frozen=True)
class ShootingResult:
    """Length and initial unit covector of the geodesic from x to y."""

    length: float
    covector: np.ndarray
    residual: float
    iterations: int
    method: str


def _gauss(lo, hi):
    """Nodes (b, Q) and weights (b, Q) on the intervals [lo, hi]."""
    x, w = _GL
    half = 0.5 * (hi - lo)[:, None]
    mid = 0.5 * (hi + lo)[:, None]
    return mid + half * x, half * w


def _check_pair(patch, x, y):
    x = np.array(x, dtype=float, ndmin=2)
    y = np.array(y, dtype=float, ndmin=2)
    x, y = np.broadcast_arrays(x, y)
    patch.check(x)
    patch.check(y)
    if np.any(np.linalg.norm(x - y, axis=-1) < MIN_SEPARATION):
        raise DomainError("points closer than the minimum separation")
    return x, y


def solve_quadrature(patch: MetricPatch, x, y, tol: float = 1e-13, max_iter: int = 40):
    with np.errstate(invalid="ignore", divide="ignore"):
        return _solve_quadrature(patch, x, y, tol, max_iter)


def _solve_quadrature(patch, x, y, tol, max_iter):
    """Batched integrable-geodesic solve.

    x, y have shape (b, n).  Returns (length, covector at x, ok) where
    ``ok`` flags pairs whose geodesic is monotone in the coupling
    coordinate and converged.  Entries with ``ok`` False are NaN.
    """
    x = np.array(x, dtype=float, ndmin=2)
    y = np.array(y, dtype=float, ndmin=2)
    b, n = x.shape
    if patch.coupling_axis is None:
        delta = y - x
        L = np.linalg.norm(delta, axis=-1)
        return L, delta / L[:, None], np.ones(b, dtype=bool)
    c = patch.coupling_axis
    pairs = np.array(patch.pairs)
    pa, pb = pairs[:, 0], pairs[:, 1]
    unpaired = np.array([j for j in range(n) if j != c and j not in pairs])

    up = y[:, c] >= x[:, c]
    lo_pt = np.where(up[:, None], x, y)
    hi_pt = np.where(up[:, None], y, x)
    D = hi_pt - lo_pt
    lo, hi = lo_pt[:, c], hi_pt[:, c]
    rise = hi - lo

    # curved part of the interval and the flat remainder (exp-flat only)
    if patch.alpha.kind == "exp_flat":
        chi = np.minimum(hi, 0.0)
        flat = np.maximum(hi - np.maximum(lo, 0.0), 0.0)
        clo = np.minimum(lo, chi)
    else:
        chi, clo, flat = hi, lo, np.zeros(b)
    s, wq = _gauss(clo, chi)
    a = patch.alpha.value(s)

    # initial guess from the chord direction
    e = D / np.linalg.norm(D, axis=-1)[:, None]
    mask_c = np.ones(n, dtype=bool)
    mask_c[c] = False
    u = np.sum(e[:, mask_c] ** 2, axis=-1)
    S = np.sum(e[:, pa] * e[:, pb], axis=-1)
    ok = rise > 1e-9 * np.linalg.norm(D, axis=-1)

    def state(sel, u, S):
        q = 1.0 - u[:, None] - 2.0 * S[:, None] * a[sel]
        fq = 1.0 - u
        return q, fq

    def evaluate(sel, u, S):
        q, fq = state(sel, u, S)
        a_, wq_, flat_, D_ = a[sel], wq[sel], flat[sel], D[sel]
        r = 1.0 / np.sqrt(q)
        r3 = r / q
        fr = 1.0 / np.sqrt(fq)
        I0 = np.sum(wq_ * r, axis=-1) + flat_ * fr
        I1 = np.sum(wq_ * a_ * r, axis=-1)
        dI0 = np.stack([0.5 * np.sum(wq_ * r3, axis=-1) + 0.5 * flat_ * fr / fq,
                        np.sum(wq_ * a_ * r3, axis=-1)], axis=-1)
        dI1 = np.stack([0.5 * np.sum(wq_ * a_ * r3, axis=-1),
                        np.sum(wq_ * a_ * a_ * r3, axis=-1)], axis=-1)
        den = I0 * I0 - I1 * I1
        xi = np.zeros((len(u), n))
        dxi = np.zeros((len(u), n, 2))
        Da, Db = D_[:, pa], D_[:, pb]
        xa = (I0[:, None] * Da - I1[:, None] * Db) / den[:, None]
        xb = (I0[:, None] * Db - I1[:, None] * Da) / den[:, None]
        xi[:, pa], xi[:, pb] = xa, xb
        gA0 = (Da - 2 * I0[:, None] * xa) / den[:, None]
        gA1 = (-Db + 2 * I1[:, None] * xa) / den[:, None]
        gB0 = (Db - 2 * I0[:, None] * xb) / den[:, None]
        gB1 = (-Da + 2 * I1[:, None] * xb) / den[:, None]
        dxi[:, pa] = gA0[..., None] * dI0[:, None, :] + gA1[..., None] * dI1[:, None, :]
        dxi[:, pb] = gB0[..., None] * dI0[:, None, :] + gB1[..., None] * dI1[:, None, :]
        if len(unpaired):
            xu = D_[:, unpaired] / I0[:, None]
            xi[:, unpaired] = xu
            dxi[:, unpaired] = (-xu / I0[:, None])[..., None] * dI0[:, None, :]
        F = np.stack([np.sum(xi[:, mask_c] ** 2, axis=-1) - u,
                      np.sum(xa * xb, axis=-1) - S], axis=-1)
        J = np.empty((len(u), 2, 2))
        J[:, 0, :] = 2 * np.einsum("bj,bjk->bk", xi[:, mask_c], dxi[:, mask_c])
        J[:, 0, 0] -= 1.0
        J[:, 1, :] = np.sum(dxi[:, pa] * xb[..., None] + xa[..., None] * dxi[:, pb], axis=1)
        J[:, 1, 1] -= 1.0
        return F, J, I0, xi

    def admissible(sel, u, S):
        q, fq = state(sel, u, S)
        return (np.min(q, axis=-1) > 0) & (fq > 0) & (u >= 0)

    ok &= admissible(slice(None), u, S)
    done = ~ok
    it = 0
    while not np.all(done) and it < max_iter:
        it += 1
        act = ~done
        F, J, _, _ = evaluate(act, u[act], S[act])
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        det = np.where(np.abs(det) > 1e-300, det, np.nan)
        step = np.stack([(-F[:, 0] * J[:, 1, 1] + F[:, 1] * J[:, 0, 1]) / det,
                         (-F[:, 1] * J[:, 0, 0] + F[:, 0] * J[:, 1, 0]) / det], axis=-1)
        step = np.where(np.isfinite(step), step, 0.0)
        lam = np.ones(act.sum())
        nu, nS = u[act] + step[:, 0], S[act] + step[:, 1]
        bad = ~admissible(act, nu, nS)
        for _ in range(30):
            if not bad.any():
                break
            lam[bad] *= 0.5
            nu[bad] = u[act][bad] + lam[bad] * step[bad, 0]
            nS[bad] = S[act][bad] + lam[bad] * step[bad, 1]
            bad = ~admissible(act, nu, nS)
        idx = np.nonzero(act)[0]
        u[idx], S[idx] = nu, nS
        small = np.max(np.abs(step), axis=-1) * lam < tol
        done[idx[small | bad]] = True
        ok[idx[bad]] = False

    F, _, I0, xi = evaluate(slice(None), u, S)
    resid = np.max(np.abs(F), axis=-1)
    ok &= np.isfinite(resid) & (resid < 1e-10)
    # covector at the lower endpoint, then orient from x
    q_lo = 1.0 - u - 2.0 * S * patch.alpha.value(lo)
    q_hi = 1.0 - u - 2.0 * S * patch.alpha.value(hi)
    xi_lo = xi.copy()
    xi_lo[:, c] = np.sqrt(np.maximum(q_lo, 0.0))
    xi_hi = xi.copy()
    xi_hi[:, c] = np.sqrt(np.maximum(q_hi, 0.0))
    cov = np.where(up[:, None], xi_lo, -xi_hi)
    L = np.where(ok, I0, np.nan)
    cov[~ok] = np.nan
    return L, cov, ok


def _endpoints(patch, x, V, step):
    """Endpoints of the geodesics from x with initial velocities V (b, n)."""
    g = patch.metric(x)
    L = np.sqrt(np.einsum("bi,ij,bj->b", V, g, V))
    xi = (V @ g) / L[:, None]
    steps = max(int(np.ceil(np.max(L) / step)), 4)
    X, _, alive = integrate(patch, np.broadcast_to(x, V.shape), xi, 1.0 / steps, steps, speed=L)
    return X[-1], alive, L, xi


def solve_shooting(patch: MetricPatch, x, y, v0=None, step: float = DEFAULT_STEP,
                   tol: float = 1e-10, max_iter: int = 50, eps: float = 1e-6) -> ShootingResult:
    """Damped Newton on the initial velocity v, with exp_x(v) = y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    v = (y - x) if v0 is None else np.asarray(v0, dtype=float)
    E = np.eye(n) * eps
    res_norm = np.inf
    for it in range(1, max_iter + 1):
        V = np.vstack([v, v + E, v - E])
        end, alive, L, xi = _endpoints(patch, x, V, step)
        if not alive.all():
            raise TruncationError("shooting geodesic left the coordinate box")
        r = y - end[0]
        res_norm = float(np.max(np.abs(r)))
        if res_norm < tol:
            return ShootingResult(float(L[0]), xi[0], res_norm, it, "shooting")
        J = (end[1:n + 1] - end[n + 1:]).T / (2 * eps)
        dv = np.linalg.solve(J, r)
        lam = 1.0
        for _ in range(12):
            trial = v + lam * dv
            e2, a2, _, _ = _endpoints(patch, x, trial[None], step)
            if a2[0] and np.max(np.abs(y - e2[0])) < res_norm:
                break
            lam *= 0.5
        v = trial
    raise ConvergenceError(f"shooting did not converge (residual {res_norm:.3g})")


def shoot(patch: MetricPatch, x, y, method: str = "auto", check_ambiguity: bool = False,
          step: float = DEFAULT_STEP) -> ShootingResult:
    """Geodesic from x to y: length and initial unit covector."""
    x, y = _check_pair(patch, x, y)
    x, y = x[0], y[0]
    if method in ("auto", "quadrature"):
        L, cov, ok = solve_quadrature(patch, x[None], y[None])
        if ok[0] and not check_ambiguity:
            return ShootingResult(float(L[0]), cov[0], 0.0, 0, "quadrature")
        if method == "quadrature" and not ok[0]:
            raise ConvergenceError("quadrature solver does not apply to this pair")
    res = solve_shooting(patch, x, y, step=step)
    if check_ambiguity:
        lengths = [res.length]
        chord = y - x
        perp = np.linalg.svd(chord[None])[2][1:]
        for k, dirn in enumerate(perp):
            for sgn in (1.0, -1.0):
                guess = chord + sgn * 0.2 * np.linalg.norm(chord) * dirn
                try:
                    lengths.append(solve_shooting(patch, x, y, v0=guess, step=step).length)
                except ConvergenceError:
                    continue
        if method == "auto":
            L, _, ok = solve_quadrature(patch, x[None], y[None])
            if ok[0]:
                lengths.append(float(L[0]))
        if max(lengths) - min(lengths) > 1e-6:
            raise AmbiguityError(f"distinct geodesic lengths {min(lengths):.9f}..{max(lengths):.9f}")
    return res


@counted("geodesic_distance.dist")
def dist(patch: MetricPatch, x, y, **kw) -> float:
    """Riemannian distance between two chart points."""
    return shoot(patch, x, y, **kw).length


def dist_many(patch: MetricPatch, x, y, memo: Optional[dict] = None) -> np.ndarray:
    """Distances for broadcastable arrays of points (..., n).

    Pairs the quadrature solver cannot handle are shot one by one.  ``memo``
    may be a per-worker dict caching those slow cases.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    xf = x.reshape(-1, x.shape[-1])
    yf = y.reshape(-1, y.shape[-1])
    _check_pair(patch, xf, yf)
    L, _, ok = solve_quadrature(patch, xf, yf)
    for i in np.nonzero(~ok)[0]:
        key = (tuple(xf[i]), tuple(yf[i]))
        if memo is not None and key in memo:
            L[i] = memo[key]
            continue
        L[i] = solve_shooting(patch, xf[i], yf[i]).length
        if memo is not None:
            memo[key] = L[i]
    return L.reshape(shape)


@counted("geodesic_distance.dist_gradient")
def dist_gradient(patch: MetricPatch, x, y, h: float = 1e-5) -> np.ndarray:
    """Gradient in x of dist(x, y) by central differences."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    E = np.eye(n) * h
    pts = np.vstack([x + E, x - E])
    d = dist_many(patch, pts, np.asarray(y, dtype=float)[None])
    return (d[:n] - d[n:]) / (2 * h)
