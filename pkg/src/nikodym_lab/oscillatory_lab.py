"""Oscillatory integrals with a Riemannian distance phase.

Cylinders around the flat parts of focusing geodesics, the adjoint
operator evaluated by tensor quadrature, multiplicity counts, square
function norms and the exponent bookkeeping that turns measured slopes
into a restriction on q.
"""
from __future__ import annotations

import functools
import heapq
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gamma, roots_legendre

from .coverage import counted
from .errors import DomainError, ResolutionError
from .geodesic_distance import dist_many
from .geodesic_flow import fan_inverse, fan_layout, fan_points
from .metric_core import MetricPatch
from .nikodym_maximal import direction_grid
from .scaling import ScalingFit, slope_fit

LAMBDA_MAX = 4096.0
NODES_PER_WAVELENGTH = 6
CROSS_NODES = 3
DIAGONAL_CUTOFF = 0.25
BUMP_RADIUS = 0.5
MAX_NODES = 2_000_000

Number = Union[int, float, Fraction]


def focus_axis(patch: MetricPatch) -> int:
    """0-based index of the coordinate along which the geodesics leave B."""
    if patch.coupling_axis is not None:
        return patch.coupling_axis
    return (patch.n - 1) // 2 if patch.n % 2 else patch.n // 2


def thin_axes(patch: MetricPatch) -> list:
    """Coordinates that vanish on the flat parts of the focusing geodesics."""
    return list(range(focus_axis(patch) + 1, patch.n))


def focus_point(patch: MetricPatch) -> np.ndarray:
    """The point with focus coordinate -1 and all other coordinates 0."""
    y = np.zeros(patch.n)
    y[focus_axis(patch)] = -1.0
    return y


@functools.lru_cache(maxsize=64)
def _legendre(m: int):
    return roots_legendre(m)


def _orthonormal_complement(v):
    n = len(v)
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(n)]))
    return q[:, 1:n]


def _sphere_volume(k):
    """Surface measure of the unit sphere in R^k."""
    return 2 * math.pi ** (k / 2) / gamma(k / 2)


@dataclass(frozen=True, eq=False)
class Cylinder:
    """{x : x_c >= 0, |x| <= 1, dist(x, ray) <= radius} for the ray P + t v, t >= 0."""

    origin: np.ndarray
    axis: np.ndarray
    radius: float
    focus: int

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        t = np.maximum((x - self.origin) @ self.axis, 0.0)
        return np.linalg.norm(x - self.origin - t[..., None] * self.axis, axis=-1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return ((x[..., self.focus] >= 0) & (np.linalg.norm(x, axis=-1) <= 1.0)
                & (self.distance(x) <= self.radius))

    @property
    def empty(self) -> bool:
        return self.axis_range() is None

    def axis_range(self):
        """Axis parameters covering the cylinder: [-radius, exit from the (1 + radius)-ball].

        None when the ray never comes within the radius of the unit ball.
        """
        b = float(self.origin @ self.axis)
        cc = float(self.origin @ self.origin) - (1.0 + self.radius) ** 2
        disc = b * b - cc
        if disc <= 0 or -b + math.sqrt(disc) <= -self.radius:
            return None
        return -self.radius, -b + math.sqrt(disc)

    def nodes(self, axis_nodes: int, cross_nodes: int = CROSS_NODES, directions: int = 0):
        """Tensor quadrature nodes and weights covering the cylinder's bounding tube.

        The caller multiplies by the indicator of the cylinder itself.
        """
        n = len(self.origin)
        k = n - 1
        if self.empty:
            raise DomainError("cylinder misses the unit ball")
        s0, s1 = self.axis_range()
        sa, wa = _legendre(axis_nodes)
        s = 0.5 * (s1 - s0) * sa + 0.5 * (s1 + s0)
        ws = 0.5 * (s1 - s0) * wa
        # radial Gauss-Legendre with the rho^(k-1) Jacobian
        ra, wra = _legendre(cross_nodes)
        rho = 0.5 * self.radius * (ra + 1)
        wr = 0.5 * self.radius * wra * rho ** (k - 1)
        if k == 1:
            dirs = np.array([[1.0], [-1.0]])
            wd = np.array([0.5, 0.5])
            wr = wr * 2.0
        else:
            m = directions or (8 if k == 2 else 4 * k * k)
            dirs = direction_grid(k, m)
            wd = np.full(m, _sphere_volume(k) / m)
        E = _orthonormal_complement(self.axis)
        cross = (rho[:, None, None] * (dirs @ E.T)[None]).reshape(-1, n)
        wc = (wr[:, None] * wd[None]).reshape(-1)
        pts = self.origin + s[:, None, None] * self.axis + cross[None]
        w = ws[:, None] * wc[None]
        return pts.reshape(-1, n), w.reshape(-1)

    def measure(self, axis_nodes: int = 4000) -> float:
        if self.empty:
            return 0.0
        pts, w = self.nodes(axis_nodes)
        return float(np.sum(w * self.contains(pts)))


@dataclass(frozen=True, eq=False)
class CylinderFamily:
    """Cylinders of radius c lambda^(-1/2) around the flat rays of geodesics from B."""

    patch: MetricPatch
    lam: float
    c: float
    ball_center: np.ndarray
    ball_radius: float
    centers: np.ndarray
    origins: np.ndarray
    axes: np.ndarray

    @property
    def separation(self) -> float:
        return self.lam ** -0.5

    @property
    def radius(self) -> float:
        return self.c * self.lam ** -0.5

    @property
    def focus(self) -> int:
        return focus_axis(self.patch)

    def __len__(self):
        return len(self.centers)

    def cylinder(self, i: int) -> Cylinder:
        return Cylinder(self.origins[i], self.axes[i], self.radius, self.focus)

    def expected_count(self) -> float:
        """(diam B / lambda^(-1/2))^(n-1)."""
        return (2 * self.ball_radius / self.separation) ** (self.patch.n - 1)

    def counts(self, x, chunk: int = 2048) -> np.ndarray:
        """Number of cylinders containing each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(len(x), dtype=int)
        if len(self) == 0:
            return out
        ok = (x[:, self.focus] >= 0) & (np.linalg.norm(x, axis=1) <= 1.0)
        r2 = self.radius ** 2
        # |x - o|^2 - max((x - o).a, 0)^2 expanded into two matrix products
        oo = np.sum(self.origins ** 2, axis=1)
        oa = np.sum(self.origins * self.axes, axis=1)
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            d2 = np.sum(xs ** 2, axis=1)[:, None] - 2.0 * xs @ self.origins.T + oo
            t = np.maximum(xs @ self.axes.T - oa, 0.0)
            d2 -= t * t
            out[s:s + chunk] = np.count_nonzero(d2 <= r2, axis=1)
        return np.where(ok, out, 0)

    def slab_bounds(self):
        """(lower, upper) of the bounding box of the slab holding every cylinder."""
        n = self.patch.n
        lo, hi = -np.ones(n), np.ones(n)
        lo[self.focus] = 0.0
        thin = thin_axes(self.patch)
        h = self.radius
        lo[thin], hi[thin] = -h, h
        return lo, hi

    def sample_slab(self, rng, size):
        lo, hi = self.slab_bounds()
        return rng.uniform(lo, hi, size=(size, self.patch.n))

    def sample_cylinders(self, rng, size):
        """Points spread over random cylinders (a probe mixture for overlap maxima)."""
        ranges = [self.cylinder(i).axis_range() for i in range(len(self))]
        live = np.array([i for i, r in enumerate(ranges) if r is not None])
        n = self.patch.n
        if len(live) == 0:
            return np.empty((0, n))
        idx = live[rng.integers(len(live), size=size)]
        t = rng.random(size)
        s_hi = np.array([ranges[i][1] for i in idx])
        g = rng.standard_normal((size, n))
        g -= np.sum(g * self.axes[idx], axis=1)[:, None] * self.axes[idx]
        g *= (self.radius * rng.random(size) ** (1 / (n - 1)) / np.linalg.norm(g, axis=1))[:, None]
        return self.origins[idx] + (t * s_hi)[:, None] * self.axes[idx] + g


def farthest_point_centers(candidates, spacing: float, start: int = 0) -> np.ndarray:
    """Greedy farthest-point sampling until every candidate is within ``spacing``.

    A lazy max-heap keyed on the distance to the chosen set; adding a centre
    only touches candidates closer to it than the current covering radius.
    """
    pts = np.asarray(candidates, dtype=float)
    tree = cKDTree(pts)
    mind = np.full(len(pts), np.inf)
    heap = []
    chosen = []
    j, radius = start, np.inf
    while True:
        chosen.append(j)
        if np.isinf(radius):
            near = np.arange(len(pts))
        else:
            near = np.asarray(tree.query_ball_point(pts[j], radius), dtype=int)
        d = np.linalg.norm(pts[near] - pts[j], axis=1)
        better = d < mind[near]
        for i, dv in zip(near[better], d[better]):
            mind[i] = dv
            heapq.heappush(heap, (-dv, int(i)))
        while heap and -heap[0][0] != mind[heap[0][1]]:
            heapq.heappop(heap)
        if not heap or -heap[0][0] < spacing:
            break
        radius, j = -heap[0][0], heap[0][1]
    return pts[chosen]


def focusing_ray(patch: MetricPatch, z):
    """(P, v): the flat part {P + t v, t >= 0} of the focusing geodesic through z.

    On the Euclidean patch the vertical line through z is used instead.
    """
    z = np.asarray(z, dtype=float)
    c = focus_axis(patch)
    if patch.family == "euclidean":
        P = z.copy()
        P[c] = 0.0
        v = np.zeros(patch.n)
        v[c] = 1.0
        return P, v
    base, d, _ = fan_inverse(patch, z[None])
    P = fan_points(patch, base, d, np.zeros(1))[0]
    free, _, _ = fan_layout(patch)
    v = np.zeros(patch.n)
    v[free] = d[0]
    v[c] = math.sqrt(max(1.0 - float(d[0] @ d[0]), 0.0))
    return P, v


def build_family(patch: MetricPatch, lam: float, c: float = 0.5, ball_radius: float = 0.25,
                 ball_center=None, refine: Optional[int] = None) -> CylinderFamily:
    """Cylinders for a maximal lambda^(-1/2)-separated set of centres in B on x_c = -1."""
    if lam <= 0 or c <= 0 or ball_radius <= 0:
        raise DomainError("lambda, c and the ball radius must be positive")
    n = patch.n
    fc = focus_axis(patch)
    y0 = focus_point(patch) if ball_center is None else np.asarray(ball_center, dtype=float)
    sep = lam ** -0.5
    if refine is None:
        refine = 4 if n <= 3 else 2
    h = sep / refine
    ticks = np.arange(-ball_radius, ball_radius + 1e-12, h)
    ticks = ticks - ticks[np.argmin(np.abs(ticks))]
    grids = np.stack(np.meshgrid(*([ticks] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
    grids = grids[np.linalg.norm(grids, axis=1) <= ball_radius]
    cand = np.tile(y0, (len(grids), 1))
    cand[:, [j for j in range(n) if j != fc]] += grids
    start = int(np.argmin(np.linalg.norm(cand - y0, axis=1)))
    centers = farthest_point_centers(cand, sep, start)
    origins, axes = zip(*(focusing_ray(patch, z) for z in centers))
    return CylinderFamily(patch, float(lam), float(c), y0, float(ball_radius), centers,
                          np.array(origins), np.array(axes))


# adjoint operator ---------------------------------------------------------------------

def smooth_bump(y, center, radius):
    """exp(1 - 1/(1 - |y - center|^2 / radius^2)) inside the ball, 0 outside; 1 at the centre."""
    y = np.asarray(y, dtype=float)
    u = np.sum((y - center) ** 2, axis=-1) / radius ** 2
    out = np.zeros(u.shape)
    inside = u < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside]))
    return out


@dataclass(frozen=True, eq=False)
class Amplitude:
    """a(x, y) = 1{|x| <= 1, x_c >= 0, |x - y| >= cutoff} * bump(y)."""

    center: np.ndarray
    radius: float
    focus: int
    cutoff: float = DIAGONAL_CUTOFF

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = ((np.linalg.norm(x, axis=-1) <= 1.0) & (x[..., self.focus] >= 0)
              & (np.linalg.norm(x - y, axis=-1) >= self.cutoff))
        return ok * smooth_bump(y, self.center, self.radius)


def default_amplitude(patch: MetricPatch) -> Amplitude:
    """Bump of radius BUMP_RADIUS around the point with focus coordinate -1."""
    return Amplitude(focus_point(patch), BUMP_RADIUS, focus_axis(patch))


def distances(patch: MetricPatch, x, y) -> np.ndarray:
    """Riemannian distances, Euclidean on the flat patch."""
    if patch.family == "euclidean":
        return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    return dist_many(patch, x, y)


@dataclass(frozen=True, eq=False)
class CylinderField:
    """g(x) = exp(i lam dist(x, phase_center)) 1_T(x), or 1_T(x) without a phase centre."""

    cylinder: Cylinder
    lam: float = 0.0
    phase_center: Optional[np.ndarray] = None

    def __call__(self, patch: MetricPatch, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = self.cylinder.contains(x).astype(complex)
        if self.phase_center is None or self.lam == 0:
            return val
        live = val != 0
        val[live] *= np.exp(1j * self.lam * distances(patch, x[live], self.phase_center))
        return val


def axis_node_count(lam: float, length: float, per_wavelength: int = NODES_PER_WAVELENGTH) -> int:
    return max(32, int(math.ceil(per_wavelength * lam * length / (2 * math.pi))))


@counted("oscillatory_lab.adjoint_apply")
def adjoint_apply(patch: MetricPatch, g: CylinderField, lam: float, y,
                  amplitude: Optional[Amplitude] = None,
                  per_wavelength: int = NODES_PER_WAVELENGTH, cross_nodes: int = CROSS_NODES,
                  lambda_max: float = LAMBDA_MAX, max_nodes: int = MAX_NODES):
    """Quadrature for the integral of exp(-i lam dist(x, y)) a(x, y) g(x) over the cylinder.

    ``y`` may be one point or an array (k, n); the result is complex of
    matching shape.
    """
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if lam > lambda_max:
        raise ResolutionError(f"lambda {lam} exceeds the resolved maximum {lambda_max}")
    cyl = g.cylinder
    if amplitude is None:
        amplitude = default_amplitude(patch)
    if cyl.empty:
        return 0j if np.ndim(y) == 1 else np.zeros(len(y), dtype=complex)
    s0, s1 = cyl.axis_range()
    m = axis_node_count(max(lam, g.lam), s1 - s0, per_wavelength)
    pts, w = cyl.nodes(m, cross_nodes)
    if len(pts) > max_nodes:
        raise ResolutionError(f"{len(pts)} quadrature nodes needed, limit {max_nodes}")
    inside = cyl.contains(pts)
    pts, w = pts[inside], w[inside]
    gx = g(patch, pts)
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    out = np.empty(len(ys), dtype=complex)
    for i, yy in enumerate(ys):
        a = amplitude(pts, yy)
        live = a != 0
        if not live.any():
            out[i] = 0.0
            continue
        phase = np.ones(live.sum(), dtype=complex)
        if lam:
            phase = np.exp(-1j * lam * distances(patch, pts[live], yy))
        out[i] = np.sum(w[live] * a[live] * gx[live] * phase)
    return out[0] if np.ndim(y) == 1 else out


def near_axis_points(patch: MetricPatch, z, lam: float, c: float, count: int, rng,
                     along: float = 0.02) -> np.ndarray:
    """Points within c lam^(-1/2) (chart) of the geodesic through z, near z."""
    z = np.asarray(z, dtype=float)
    n = patch.n
    if patch.family == "euclidean":
        base_pts = np.tile(z, (count, 1))
        base_pts[:, focus_axis(patch)] += rng.uniform(-along, along, count)
        tang = np.zeros((count, n))
        tang[:, focus_axis(patch)] = 1.0
    else:
        base, d, t = fan_inverse(patch, z[None])
        ts = t[0] + rng.uniform(-along, along, count)
        base_pts = fan_points(patch, np.repeat(base, count, 0), np.repeat(d, count, 0), ts)
        eps = 1e-6
        tang = (fan_points(patch, np.repeat(base, count, 0), np.repeat(d, count, 0), ts + eps)
                - base_pts) / eps
        tang /= np.linalg.norm(tang, axis=1)[:, None]
    g = rng.standard_normal((count, n))
    g -= np.sum(g * tang, axis=1)[:, None] * tang
    r = c * lam ** -0.5 * rng.random(count) ** (1 / (n - 1))
    g *= (r / np.linalg.norm(g, axis=1))[:, None]
    return base_pts + g


def dual_tube_magnitudes(patch: MetricPatch, lam: float, c: float = 0.5, ball_radius: float = 0.05,
                         y_samples: int = 4, seed: int = 0, **kw):
    """(mean |S* g_alpha| near the central geodesic, its standard error, cylinder measure)."""
    y0 = focus_point(patch)
    P, v = focusing_ray(patch, y0)
    cyl = Cylinder(P, v, c * lam ** -0.5, focus_axis(patch))
    g = CylinderField(cyl, lam, y0)
    amp = default_amplitude(patch)
    rng = np.random.default_rng([seed, int(lam)])
    ys = near_axis_points(patch, y0, lam, c, y_samples, rng)
    vals = np.abs(adjoint_apply(patch, g, lam, ys, amplitude=amp, **kw))
    err = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), err, cyl.measure()


@counted("oscillatory_lab.dual_tube_scaling")
def dual_tube_scaling(patch: MetricPatch, lambda_schedule: Sequence[float], c: float = 0.5,
                      tolerance: Optional[float] = None, **kw) -> ScalingFit:
    """lambda-slope of the mean adjoint magnitude on the dual tube; expected -(n-1)/2."""
    pts = [(lam, dual_tube_magnitudes(patch, lam, c, **kw)[0]) for lam in lambda_schedule]
    fit = slope_fit(pts, label=f"dual tube n={patch.n} {patch.family}")
    if tolerance is not None:
        fit = fit.expect(-(patch.n - 1) / 2, tolerance)
    return fit


# counting -----------------------------------------------------------------------------

@counted("oscillatory_lab.overlap_count")
def overlap_count(family: CylinderFamily, probes: int = 20_000, seed: int = 0) -> int:
    """Largest number of cylinders containing a probe point."""
    if len(family) == 0:
        return 0
    rng = np.random.default_rng(seed)
    half = probes // 2
    pts = np.concatenate([family.sample_slab(rng, probes - half),
                          family.sample_cylinders(rng, half)])
    return int(family.counts(pts).max())


def overlap_exponent(patch: MetricPatch) -> float:
    n = patch.n
    return (n - 1) / 4 if n % 2 else (n - 2) / 4


def overlap_scaling(patch: MetricPatch, lambda_schedule: Sequence[float], c: float = 0.5,
                    ball_radius: float = 0.25, probes: int = 20_000, seed: int = 0,
                    tolerance: Optional[float] = None) -> ScalingFit:
    pts = []
    for j, lam in enumerate(lambda_schedule):
        fam = build_family(patch, lam, c, ball_radius)
        pts.append((lam, overlap_count(fam, probes, seed + j)))
    fit = slope_fit(pts, label=f"overlap n={patch.n} {patch.family}")
    if tolerance is not None:
        fit = fit.expect(overlap_exponent(patch), tolerance)
    return fit


@counted("oscillatory_lab.square_function_norm")
def square_function_norm(family: CylinderFamily, q_prime: float, samples: int = 200_000,
                         seed: int = 0) -> float:
    """L^q' norm over the unit ball of (sum_alpha 1_{T_alpha})^(1/2), by Monte Carlo on the slab."""
    if not 1 < q_prime <= 2:
        raise DomainError("q' must lie in (1, 2]")
    if len(family) == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    lo, hi = family.slab_bounds()
    vol = float(np.prod(hi - lo))
    pts = rng.uniform(lo, hi, size=(samples, family.patch.n))
    cnt = family.counts(pts).astype(float)
    return float((vol * np.mean(cnt ** (q_prime / 2))) ** (1 / q_prime))


def square_function_exponent(n: int, q_prime: Number):
    """Upper-bound exponent of the square function norm in lambda."""
    e = Fraction(n - 1 if n % 2 else n - 2)
    qp = Fraction(q_prime) if not isinstance(q_prime, float) else q_prime
    return e / 8 - e / (4 * qp)


def square_function_scaling(patch: MetricPatch, lambda_schedule: Sequence[float], q_prime: float,
                            c: float = 0.5, ball_radius: float = 0.25, samples: int = 200_000,
                            seed: int = 0, tolerance: Optional[float] = None) -> ScalingFit:
    pts = []
    for j, lam in enumerate(lambda_schedule):
        fam = build_family(patch, lam, c, ball_radius)
        pts.append((lam, square_function_norm(fam, q_prime, samples, seed + j)))
    fit = slope_fit(pts, label=f"square function n={patch.n} q'={q_prime}")
    if tolerance is not None:
        fit = fit.expect(float(square_function_exponent(patch.n, q_prime)), tolerance)
    return fit


# exponent bookkeeping -----------------------------------------------------------------

class Threshold(NamedTuple):
    q: Fraction
    baseline: Fraction


@counted("oscillatory_lab.exponent_threshold")
def exponent_threshold(n: int) -> Threshold:
    """Smallest q allowed by the cylinder example, and the classical 2n/(n-1)."""
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise DomainError("n must be an integer >= 3")
    n = int(n)
    q = Fraction(2 * (3 * n + 1), 3 * (n - 1)) if n % 2 else Fraction(2 * (3 * n + 2), 3 * n - 2)
    return Threshold(q, Fraction(2 * n, n - 1))


def exact_exponents(n: int):
    """(dual tube slope, square-function slopes at q' = 2 and 4/3) as rationals."""
    return (Fraction(-(n - 1), 2),
            {Fraction(2): square_function_exponent(n, Fraction(2)),
             Fraction(4, 3): square_function_exponent(n, Fraction(4, 3))})


@dataclass
class ChainReport:
    n: int
    dual_slope: Number
    square_offset: Number
    square_rate: Number
    implied: Number
    expected: Fraction
    tolerance: float
    q: Optional[Number] = None

    @property
    def deviation(self) -> float:
        return float(self.implied) - float(self.expected)

    @property
    def passed(self) -> bool:
        return abs(self.deviation) <= self.tolerance

    @property
    def exact(self) -> bool:
        return isinstance(self.implied, Fraction) and self.implied == self.expected

    @property
    def q_excluded(self) -> Optional[bool]:
        """True when q lies below the implied threshold."""
        return None if self.q is None else bool(self.q < self.implied)


def _fit_square_slopes(square_slopes: Mapping):
    """Solve slope(q') = a - b / q' for (a, b); exact when given two rational points."""
    items = sorted(square_slopes.items())
    if len(items) < 2:
        raise DomainError("need square-function slopes at two or more q' values")
    exact = all(isinstance(k, (int, Fraction)) and isinstance(v, (int, Fraction)) for k, v in items)
    if exact and len(items) == 2:
        (q1, s1), (q2, s2) = [(Fraction(k), Fraction(v)) for k, v in items]
        b = (s1 - s2) / (1 / q2 - 1 / q1)
        return s1 + b / q1, b
    X = np.array([[1.0, -1.0 / float(k)] for k, _ in items])
    yv = np.array([float(v) for _, v in items])
    (a, b), *_ = np.linalg.lstsq(X, yv, rcond=None)
    return float(a), float(b)


@counted("oscillatory_lab.chain_inequality_check")
def chain_inequality_check(n: int, dual_slope: Number, square_slopes: Mapping,
                           q: Optional[Number] = None, tolerance: float = 0.2) -> ChainReport:
    """Threshold on q implied by dual-tube and square-function slopes.

    With square-function slope a - b/q' and dual slope d, the chain
    lambda^d <= lambda^(-n/q) lambda^(a - b/q') holds for large lambda
    only if q >= (n - b) / (a - b - d).
    """
    a, b = _fit_square_slopes(square_slopes)
    denom = a - b - dual_slope
    if denom <= 0:
        raise DomainError("slopes leave the chain without a threshold")
    implied = (n - b) / denom
    return ChainReport(n, dual_slope, a, b, implied, exponent_threshold(n).q, tolerance, q)
