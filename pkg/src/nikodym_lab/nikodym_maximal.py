"""Geodesic tubes, Monte-Carlo tube averages and the Nikodym maximal function.

A tube is the set of points within chart distance ``delta`` of the
polyline through the samples of a geodesic path.  Points are drawn
exactly uniformly from the tube: a segment is chosen with probability
proportional to the volume of the cylinder around it (length + 2 delta,
radius delta), a point is drawn in that cylinder, and it is kept only if the chosen segment is the first one (in path
order) within ``delta`` of it.  Every tube point is then produced by one
segment only, so the accepted points are uniform on the union.

Averages are taken against the Riemannian volume ``dV = rho dx`` by
weighting the uniform samples with the volume density.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numba
import numpy as np
from scipy import integrate as sp_integrate
from scipy.special import gamma
from scipy.stats import qmc

from .coverage import counted
from .errors import DegenerateTubeError, DomainError, TruncationError
from .geodesic_flow import (FanParams, GeodesicPath, closed_form_fan, fan_covector,
                            fan_inverse, fan_jacobian, fan_path, flow_batch)
from .metric_core import MetricPatch
from .scaling import ScalingFit, slope_fit

DEFAULT_SAMPLES = 40_000
DEFAULT_MAX_DIRECTIONS = 128
TUBE_STEP = 5e-3
VARIANTS = ("flat_slab", "monomial_slab", "odd_slab", "even_slab")


@numba.njit(cache=True)
def _first_owner(pts, seg, A, D, len2, delta, window):
    """True where seg[i] is the first segment within delta of pts[i]."""
    m, n = pts.shape
    keep = np.zeros(m, dtype=np.bool_)
    d2max = delta * delta
    for i in range(m):
        s = seg[i]
        lo = max(s - window, 0)
        owner = -1
        for j in range(lo, s + 1):
            dot = 0.0
            for k in range(n):
                dot += (pts[i, k] - A[j, k]) * D[j, k]
            t = min(max(dot / len2[j], 0.0), 1.0)
            d2 = 0.0
            for k in range(n):
                r = pts[i, k] - A[j, k] - t * D[j, k]
                d2 += r * r
            if d2 <= d2max:
                owner = j
                break
        keep[i] = owner == s
    return keep


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return math.pi ** (dim / 2) / gamma(dim / 2 + 1) * radius ** dim


@dataclass(frozen=True, eq=False)
class Tube:
    """The chart delta-neighbourhood of a sampled geodesic."""

    path: GeodesicPath
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError("tube width must be positive")
        if len(self.path) < 2:
            raise DomainError("tube path needs at least two samples")

    @property
    def r(self) -> float:
        return self.path.length

    @property
    def vertices(self) -> np.ndarray:
        return self.path.x

    @cached_property
    def _segments(self):
        P = self.path.x
        A = P[:-1]
        D = P[1:] - P[:-1]
        length = np.linalg.norm(D, axis=-1)
        if np.any(length == 0):
            raise DegenerateTubeError("repeated path sample")
        U = D / length[:, None]
        n = P.shape[1]
        # Householder frames whose first column is the segment direction
        e1 = np.zeros(n)
        e1[0] = 1.0
        v = e1 - U
        vv = np.sum(v * v, axis=-1)
        H = np.broadcast_to(np.eye(n), (len(U), n, n)).copy()
        flip = vv > 1e-24
        H[flip] -= 2.0 * v[flip, :, None] * v[flip, None, :] / vv[flip, None, None]
        vol = (length + 2 * self.delta) * ball_volume(n - 1, self.delta)
        window = int(math.ceil(2 * self.delta / length.min())) + 1
        return A, D, length, H, vol, window

    def _seg_dist(self, pts, j):
        A, D, length, _, _, _ = self._segments
        rel = pts - A[j]
        t = np.clip(np.sum(rel * D[j], axis=-1) / (length[j] ** 2), 0.0, 1.0)
        return np.linalg.norm(rel - t[:, None] * D[j], axis=-1)

    def distance(self, points, chunk: int = 4096) -> np.ndarray:
        """Chart distance to the polyline."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        A, D, length, _, _, _ = self._segments
        out = np.empty(len(pts))
        for s in range(0, len(pts), chunk):
            q = pts[s:s + chunk, None, :] - A[None]
            t = np.clip(np.einsum("bkn,kn->bk", q, D) / length ** 2, 0.0, 1.0)
            d = np.linalg.norm(q - t[..., None] * D[None], axis=-1)
            out[s:s + chunk] = d.min(axis=1)
        return out

    def contains(self, points) -> np.ndarray:
        return self.distance(points) <= self.delta

    def _propose(self, rng, m):
        A, D, length, H, vol, window = self._segments
        n = A.shape[1]
        seg = rng.choice(len(vol), size=m, p=vol / vol.sum())
        a = -self.delta + rng.random(m) * (length[seg] + 2 * self.delta)
        # uniform in the (n-1)-ball of radius delta across the segment
        b = rng.standard_normal((m, n - 1))
        b *= (self.delta * rng.random(m) ** (1.0 / (n - 1))
              / np.linalg.norm(b, axis=1))[:, None]
        local = np.concatenate([a[:, None], b], axis=1)
        pts = A[seg] + np.einsum("mij,mj->mi", H[seg], local)
        keep = _first_owner(pts, seg, A, D, length ** 2, self.delta, window)
        return pts, keep

    def sample(self, rng: np.random.Generator, size: int, max_rounds: int = 50) -> np.ndarray:
        """Uniform points in the tube (chart Lebesgue measure)."""
        out, have = [], 0
        rate = 0.5
        for _ in range(max_rounds):
            m = int(min(max((size - have) / max(rate, 0.05) * 1.1, 64), 4 * size + 64))
            pts, keep = self._propose(rng, m)
            rate = max(keep.mean(), 1e-3)
            out.append(pts[keep])
            have += int(keep.sum())
            if have >= size:
                break
        if have == 0:
            raise DegenerateTubeError("no accepted tube samples")
        return np.concatenate(out)[:size]

    def euclidean_volume(self, rng: np.random.Generator, samples: int = DEFAULT_SAMPLES) -> float:
        _, _, _, _, vol, _ = self._segments
        _, keep = self._propose(rng, samples)
        return float(vol.sum() * keep.mean())

    def measure(self, patch: MetricPatch, rng: np.random.Generator,
                samples: int = DEFAULT_SAMPLES) -> float:
        """Riemannian volume of the tube."""
        _, _, _, _, vol, _ = self._segments
        pts, keep = self._propose(rng, samples)
        rho = np.zeros(len(pts))
        rho[keep] = patch.volume_density(pts[keep], check=False)
        return float(vol.sum() * rho.mean())


def tube_average_stats(patch: MetricPatch, tube: Tube, f: Callable, rng=None,
                       samples: int = DEFAULT_SAMPLES, seed: int = 0):
    """(average of |f| against dV, standard error, accepted count)."""
    rng = np.random.default_rng(seed) if rng is None else rng
    pts = tube.sample(rng, samples)
    w = patch.volume_density(pts, check=False)
    v = np.abs(np.broadcast_to(np.asarray(f(pts), dtype=float), (len(pts),)))
    W = w.sum()
    mean = float(np.sum(w * v) / W)
    err = float(np.sqrt(np.sum((w * (v - mean)) ** 2)) / W)
    return mean, err, len(pts)


@counted("nikodym_maximal.tube_average")
def tube_average(patch: MetricPatch, tube: Tube, f: Callable, rng=None,
                 samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Monte-Carlo average of |f| over the tube with the Riemannian volume."""
    return tube_average_stats(patch, tube, f, rng, samples, seed)[0]


@dataclass(frozen=True)
class SlabFunction:
    """Indicator of the thin slabs that concentrate tube averages.

    ``flat_slab``      x2 > 0, |(x1, x2)| < c, |x3| < delta          (n = 3)
    ``monomial_slab``  0 <= x2 <= delta^(1/(k+1)), |x1| <= c, |x3| <= delta
    ``odd_slab``       |(x1..x_m)| < c, |x_j| < delta for j > m, m = (n+1)/2
    ``even_slab``      same with m = (n+2)/2
    (coordinates 1-based as written).
    """

    variant: str
    c: float
    delta: float
    n: int = 3
    k: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown slab variant {self.variant!r}")
        if self.c <= 0 or self.delta <= 0:
            raise DomainError("c and delta must be positive")
        if self.variant in ("flat_slab", "monomial_slab") and self.n != 3:
            raise DomainError("three dimensional slab needs n = 3")
        if self.variant == "odd_slab" and (self.n < 3 or self.n % 2 == 0):
            raise DomainError("odd slab needs odd n >= 3")
        if self.variant == "even_slab" and (self.n < 4 or self.n % 2):
            raise DomainError("even slab needs even n >= 4")

    @property
    def ball_dims(self) -> int:
        """Number of leading coordinates constrained by the radius c."""
        if self.variant == "flat_slab":
            return 2
        if self.variant == "odd_slab":
            return (self.n + 1) // 2
        if self.variant == "even_slab":
            return (self.n + 2) // 2
        return 0

    @property
    def height(self) -> float:
        """Top of the monomial slab in the coupling coordinate."""
        return self.delta ** (1.0 / (self.k + 1))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.delta
        if self.variant == "flat_slab":
            ok = (x[..., 1] > 0) & (np.hypot(x[..., 0], x[..., 1]) < self.c) & (np.abs(x[..., 2]) < d)
        elif self.variant == "monomial_slab":
            ok = ((x[..., 1] >= 0) & (x[..., 1] <= self.height)
                  & (np.abs(x[..., 0]) <= self.c) & (np.abs(x[..., 2]) <= d))
        else:
            m = self.ball_dims
            ok = (np.linalg.norm(x[..., :m], axis=-1) < self.c) & np.all(np.abs(x[..., m:]) < d, axis=-1)
        return ok.astype(float)

    def support_distance(self, x) -> np.ndarray:
        """A lower bound for the chart distance from x to the support."""
        x = np.asarray(x, dtype=float)
        d = self.delta
        if self.variant == "flat_slab":
            parts = [-x[..., 1], np.hypot(x[..., 0], x[..., 1]) - self.c, np.abs(x[..., 2]) - d]
        elif self.variant == "monomial_slab":
            parts = [-x[..., 1], x[..., 1] - self.height, np.abs(x[..., 0]) - self.c,
                     np.abs(x[..., 2]) - d]
        else:
            m = self.ball_dims
            slab = np.linalg.norm(np.maximum(np.abs(x[..., m:]) - d, 0.0), axis=-1)
            parts = [np.linalg.norm(x[..., :m], axis=-1) - self.c, slab]
        return np.maximum(np.max(np.stack(parts), axis=0), 0.0)

    def integral(self, patch: MetricPatch) -> float:
        """int f dV, reduced to a one dimensional quadrature in the coupling coordinate."""
        axis = patch.coupling_axis
        if axis is None:
            rho = lambda s: 1.0
        else:
            rho = lambda s: float(patch.volume_density(_axis_point(patch.n, axis, s), check=False))
        d = self.delta
        if self.variant == "monomial_slab":
            val, _ = sp_integrate.quad(rho, 0.0, self.height, epsabs=1e-14, epsrel=1e-12)
            return 2 * self.c * 2 * d * val
        m = self.ball_dims
        lo = 0.0 if self.variant == "flat_slab" else -self.c
        cross = lambda s: rho(s) * ball_volume(m - 1, math.sqrt(max(self.c ** 2 - s * s, 0.0)))
        brk = [0.0] if lo < 0 else None
        val, _ = sp_integrate.quad(cross, lo, self.c, epsabs=1e-14, epsrel=1e-12, points=brk, limit=200)
        return val * (2 * d) ** (self.n - m)

    def norm_p(self, patch: MetricPatch, p: float) -> float:
        """L^p norm with respect to the Riemannian volume."""
        return self.integral(patch) ** (1.0 / p)


def _axis_point(n, axis, s):
    x = np.zeros(n)
    x[axis] = s
    return x


def direction_grid(n: int, count: int, seed: int = 12345) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors in R^n."""
    if count < 1:
        raise DomainError("need at least one direction")
    if n == 2:
        a = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        rr = np.sqrt(1 - z * z)
        return np.column_stack([rr * np.cos(phi), rr * np.sin(phi), z])
    from scipy.stats import norm
    u = qmc.Sobol(n, scramble=True, seed=seed).random(count)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1)[:, None]


def grid_size(n: int, delta: float, max_directions: int) -> int:
    """Directions needed for spacing delta/2 on the unit sphere, capped."""
    area = 2 * math.pi ** (n / 2) / gamma(n / 2)
    need = area / (delta / 2) ** (n - 1)
    return int(min(max(math.ceil(need), 2 * n), max_directions))


def fan_tube_path(patch: MetricPatch, fan: FanParams, t_x: float, r: float, anchor: float,
                  step: float = TUBE_STEP) -> GeodesicPath:
    return fan_path(patch, fan, t_x - anchor * r, t_x + (1 - anchor) * r, step)


def _tube_step(delta, r, base_step):
    return max(base_step, min(2 * delta, r / 8))


def _best_average(patch, paths, delta, f, samples, seed, known_best=0.0):
    """Largest tube average over the given paths.

    When ``f`` exposes ``support_distance`` (and is bounded by 1) two
    exact shortcuts apply.  A tube whose vertices all sit farther than
    ``delta`` plus half a segment from the support has average zero.  Only
    segments with a vertex that close can meet the support, which bounds
    the average by their share of the tube; tubes whose bound cannot beat
    the current best are skipped.
    """
    best, best_idx = known_best, -1
    dist_fn = getattr(f, "support_distance", None)
    for idx, path in enumerate(paths):
        path = path.resample(_tube_step(delta, path.length, path.step))
        if dist_fn is not None:
            seglen = np.linalg.norm(np.diff(path.x, axis=0), axis=-1)
            reach = delta + 0.5 * seglen.max()
            sd = dist_fn(path.x)
            if np.min(sd) > reach:
                continue
            near = (sd[:-1] <= reach) | (sd[1:] <= reach)
            rho = patch.volume_density(path.x, check=False)
            bound = (np.sum(seglen[near] + 2 * delta) / np.sum(seglen)
                     * rho.max() / rho.min() * 1.05)
            if bound <= best:
                continue
        rng = np.random.default_rng([seed, idx])
        val = tube_average(patch, Tube(path, delta), f, rng, samples)
        if val > best:
            best, best_idx = val, idx
    return best, best_idx


def cosphere_paths(patch: MetricPatch, x, r: float, count: int, anchor: float = 0.5,
                   step: float = TUBE_STEP):
    """Geodesics of length r through x in ``count`` grid directions.

    Paths leaving the box are dropped; returns (paths, dropped count).
    """
    x = np.asarray(x, dtype=float)
    E = direction_grid(patch.n, count)
    g = patch.metric(x)
    xi = E @ g
    xi /= patch.hamiltonian(np.broadcast_to(x, xi.shape), xi)[:, None]
    t, X, XI, alive = flow_batch(patch, np.broadcast_to(x, xi.shape), xi,
                                 (-anchor * r, (1 - anchor) * r), step)
    h = float(np.min(np.diff(t)))
    paths = [GeodesicPath(t, X[:, i], XI[:, i], h) for i in np.nonzero(alive)[0]]
    return paths, int((~alive).sum())


def witness_path(patch: MetricPatch, x, witness: Optional[FanParams], r: float,
                 anchor: float, step: float = TUBE_STEP) -> Optional[GeodesicPath]:
    if witness is None:
        return None
    fan = witness
    if isinstance(fan, str):
        fan, _ = fan_inverse(patch, x)
    free_t = _fan_time(patch, fan, x)
    path = fan_tube_path(patch, fan, free_t, r, anchor, step)
    if not np.all(patch.contains(path.x)):
        raise DomainError("witness tube leaves the coordinate box")
    return path


def _fan_time(patch, fan, x):
    d = fan.direction
    w = math.sqrt(1.0 - float(np.sum(d * d)))
    t = float(x[patch.coupling_axis]) / w
    if np.max(np.abs(closed_form_fan(patch, fan, t) - x)) > 1e-9:
        raise DomainError("witness fan does not pass through x")
    return t


def maximal_profile(patch: MetricPatch, x, deltas: Sequence[float], r: float,
                    f_for_delta: Callable, witness=None, anchor: float = 0.5,
                    max_directions: int = DEFAULT_MAX_DIRECTIONS,
                    samples: int = DEFAULT_SAMPLES, seed: int = 0,
                    step: float = TUBE_STEP) -> np.ndarray:
    """maximal_at for several widths, sharing one set of geodesics.

    ``f_for_delta(delta)`` returns the function to average at that width.
    The direction grid is sized for the smallest width.
    """
    x = np.asarray(x, dtype=float)
    patch.check(x)
    paths = []
    if max_directions > 0:
        count = grid_size(patch.n, min(deltas), max_directions)
        paths, _ = cosphere_paths(patch, x, r, count, anchor, step)
    wpath = witness_path(patch, x, witness, r, anchor, step)
    out = np.empty(len(deltas))
    for j, delta in enumerate(deltas):
        f = f_for_delta(delta)
        best = 0.0
        if wpath is not None:
            best, _ = _best_average(patch, [wpath], delta, f, samples, seed * 7919 + 104729)
        best, _ = _best_average(patch, paths, delta, f, samples, seed, best)
        out[j] = best
    return out


@counted("nikodym_maximal.maximal_at")
def maximal_at(patch: MetricPatch, x, delta: float, r: float, f: Callable,
               witness=None, anchor: float = 0.5,
               max_directions: int = DEFAULT_MAX_DIRECTIONS,
               samples: int = DEFAULT_SAMPLES, seed: int = 0,
               step: float = TUBE_STEP) -> float:
    """Discrete Nikodym maximal function at x.

    Maximum of tube averages of |f| over geodesics of length r through x in
    a grid of directions (spacing delta/2, capped at ``max_directions``),
    plus the closed-form fan geodesic through x when ``witness`` is given
    (``"auto"`` inverts the fan at x).  ``anchor`` is the fraction of the
    tube lying before x: 0.5 centres the tube, 0 starts it at x.
    """
    return float(maximal_profile(patch, x, [delta], r, lambda _d: f, witness, anchor,
                                 max_directions, samples, seed, step)[0])


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def grid(self, per_axis: int):
        """Cell-centred lattice points inside the ball and the cell volume."""
        c = np.asarray(self.center, dtype=float)
        n = len(c)
        h = 2 * self.radius / per_axis
        ticks = -self.radius + h * (np.arange(per_axis) + 0.5)
        mesh = np.stack(np.meshgrid(*([ticks] * n), indexing="ij"), axis=-1).reshape(-1, n)
        inside = np.linalg.norm(mesh, axis=1) <= self.radius
        return c + mesh[inside], h ** n


@dataclass(frozen=True)
class RatioResult:
    delta: float
    ratio: float
    l1: float
    norm: float
    values: tuple


def _profile_worker(args):
    (patch, x, deltas, r, variant, c, n, k, witness, anchor, max_dirs, samples, seed, step) = args
    f_for = lambda d: SlabFunction(variant, c, d, n, k)
    return maximal_profile(patch, x, deltas, r, f_for, witness, anchor, max_dirs, samples,
                           seed, step)


def _workers(requested):
    cap = os.environ.get("NIKODYM_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(requested or cap, cap))


def counterexample_ratios(patch: MetricPatch, variant: str, p: float, deltas: Sequence[float],
                          ball: Ball, grid: int = 3, c: float = 0.25, k: int = 1, r: float = 1.0,
                          anchor: float = 0.5, witness: bool = True,
                          max_directions: int = DEFAULT_MAX_DIRECTIONS,
                          samples: int = DEFAULT_SAMPLES, seed: int = 0,
                          workers: Optional[int] = 1, step: float = TUBE_STEP):
    """L^1(B) norm of the maximal function over the L^p norm of the slab, per width."""
    if not 1 < p <= patch.n:
        raise DomainError("p must lie in (1, n]")
    centre = np.asarray(ball.center, dtype=float)
    if witness:
        fan, t = fan_inverse(patch, centre)
        if fan_jacobian(patch, fan, t) <= 0:
            raise DomainError("fan Jacobian vanishes at the ball centre")
    pts, cell = ball.grid(grid)
    patch.check(pts)
    jobs = []
    for i, x in enumerate(pts):
        wit = fan_inverse(patch, x)[0] if witness else None
        jobs.append((patch, x, tuple(deltas), r, variant, c, patch.n, k, wit, anchor,
                     max_directions, samples, seed * 1_000_003 + i, step))
    nw = _workers(workers)
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            M = np.array(list(pool.map(_profile_worker, jobs)))
    else:
        M = np.array([_profile_worker(j) for j in jobs])
    rho = patch.volume_density(pts)
    out = []
    for j, d in enumerate(deltas):
        l1 = float(np.sum(M[:, j] * rho) * cell)
        norm = SlabFunction(variant, c, d, patch.n, k).norm_p(patch, p)
        out.append(RatioResult(float(d), l1 / norm, l1, norm, tuple(M[:, j])))
    return out


@counted("nikodym_maximal.counterexample_ratio")
def counterexample_ratio(patch: MetricPatch, slab: SlabFunction, p: float, ball: Ball,
                         grid: int = 3, **kw) -> float:
    """Single-width ratio ||M f||_{L^1(B)} / ||f||_p."""
    res = counterexample_ratios(patch, slab.variant, p, [slab.delta], ball, grid,
                                c=slab.c, k=slab.k, **kw)
    return res[0].ratio


def expected_ratio_slope(variant: str, p: float, n: int = 3, k: int = 1) -> float:
    if variant == "flat_slab":
        return -1.0 / p
    if variant == "monomial_slab":
        return 1.0 / (k + 1) - (k + 2) / ((k + 1) * p)
    if variant == "odd_slab":
        return -(n - 1) / (2 * p)
    return -(n - 2) / (2 * p)


def counterexample_scaling(patch: MetricPatch, variant: str, p: float, deltas: Sequence[float],
                           ball: Ball, tolerance: float = 0.15, **kw):
    """Slope fit of the ratio against delta, with the expected exponent attached."""
    res = counterexample_ratios(patch, variant, p, deltas, ball, **kw)
    fit = slope_fit([(r_.delta, r_.ratio) for r_ in res])
    exp = expected_ratio_slope(variant, p, patch.n, kw.get("k", 1))
    return fit.expect(exp, tolerance, f"{variant} n={patch.n} p={p}"), res
