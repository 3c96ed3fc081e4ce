"""Tube geometry and counting: cosphere separation, tip spreading, bushes,
and the volume of neighbourhoods of a focusing plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coverage import counted
from .errors import CounterexampleViolation, DomainError
from .geodesic_flow import (GeodesicPath, fan_inverse, fan_layout, fan_path,
                            flow_batch)
from .metric_core import MetricPatch
from .nikodym_maximal import TUBE_STEP, Ball, Tube, ball_volume, tube_average
from .scaling import ScalingFit, slope_fit


@counted("tube_combinatorics.cosphere_theta")
def cosphere_theta(g1: GeodesicPath, g2: GeodesicPath, chunk: int = 2048) -> float:
    """min over sample pairs of |(x1, xi1) - (x2, xi2)| in chart coordinates."""
    Z1 = np.concatenate([g1.x, g1.xi], axis=1)
    Z2 = np.concatenate([g2.x, g2.xi], axis=1)
    best = np.inf
    for s in range(0, len(Z1), chunk):
        d2 = (np.sum(Z1[s:s + chunk] ** 2, axis=1)[:, None] + np.sum(Z2 ** 2, axis=1)[None]
              - 2 * Z1[s:s + chunk] @ Z2.T)
        best = min(best, float(d2.min()))
    return math.sqrt(max(best, 0.0))


def _near_runs(tube: Tube, other: Tube, reach: float):
    """Sub-tubes of ``tube`` made of the segments that come within ``reach`` of ``other``."""
    x = tube.path.x
    near = other.distance(x) <= reach
    seg = near[:-1] | near[1:]
    runs, start = [], None
    for i, flag in enumerate(np.append(seg, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            p = tube.path
            runs.append(Tube(GeodesicPath(p.t[start:i + 1], p.x[start:i + 1],
                                          p.xi[start:i + 1], p.step), tube.delta))
            start = None
    return runs


@counted("tube_combinatorics.spread_check")
def spread_check(patch: MetricPatch, g1: GeodesicPath, g2: GeodesicPath, a, delta: float,
                 lam: float, samples: int = 20_000, seed: int = 0) -> bool:
    """True when no sampled point of the two tubes' intersection lies outside B(a, lam).

    Samples are drawn from the parts of each tube lying near the other
    tube, where the intersection must live.  B(a, lam) is the chart ball.
    """
    a = np.asarray(a, dtype=float)
    T1, T2 = Tube(g1, delta), Tube(g2, delta)
    if not (T1.contains(a[None])[0] and T2.contains(a[None])[0]):
        raise DomainError("a must lie in both tubes")
    rng = np.random.default_rng(seed)
    for A_, B_ in ((T1, T2), (T2, T1)):
        seglen = np.max(np.linalg.norm(np.diff(A_.path.x, axis=0), axis=1))
        for sub in _near_runs(A_, B_, 2 * delta + seglen):
            pts = sub.sample(rng, samples)
            far = np.linalg.norm(pts - a, axis=1) >= lam
            if far.any() and B_.contains(pts[far]).any():
                return False
    return True


@dataclass(frozen=True)
class SeparatedFamily:
    """Greedy maximal separated subset of candidate points."""

    centers: np.ndarray
    spacing: float
    indices: np.ndarray
    tubes: tuple = ()

    def __len__(self):
        return len(self.centers)


def greedy_separated(points, spacing: float) -> np.ndarray:
    """Indices of a maximal ``spacing``-separated subset, scanning in order."""
    pts = np.asarray(points, dtype=float)
    chosen = []
    if len(pts) == 0:
        return np.array([], dtype=int)
    mind = np.full(len(pts), np.inf)
    for i in range(len(pts)):
        if mind[i] >= spacing:
            chosen.append(i)
            mind = np.minimum(mind, np.linalg.norm(pts - pts[i], axis=1))
    return np.array(chosen, dtype=int)


def separated_family(points, spacing: float, tubes=None) -> SeparatedFamily:
    idx = greedy_separated(points, spacing)
    pts = np.asarray(points, dtype=float)
    tb = tuple(tubes[i] for i in idx) if tubes is not None else ()
    return SeparatedFamily(pts[idx], spacing, idx, tb)


# calibration of the separation constant ------------------------------------------------

@dataclass(frozen=True)
class SpreadTrial:
    theta: float
    delta: float
    lam: float
    passed: bool

    @property
    def critical_c(self) -> float:
        """The hypothesis theta >= delta/(c lam) holds exactly for c >= this."""
        return self.delta / (self.lam * self.theta) if self.theta > 0 else np.inf


def _random_unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def intersection_points(g1: GeodesicPath, g2: GeodesicPath, delta: float, rng,
                        samples: int = 4000) -> np.ndarray:
    """Sampled points of the intersection of the two delta-tubes."""
    T1, T2 = Tube(g1, delta), Tube(g2, delta)
    seglen = np.max(np.linalg.norm(np.diff(g1.x, axis=0), axis=1))
    out = [np.empty((0, g1.x.shape[1]))]
    for sub in _near_runs(T1, T2, 2 * delta + seglen):
        pts = sub.sample(rng, samples)
        out.append(pts[T2.contains(pts)])
    return np.concatenate(out)


def spread_trials(patch: MetricPatch, trials: int, seed: int = 0, r: float = 0.6,
                  angle_scale=(0.5, 8.0), delta_range=(0.01, 0.04), lam_range=(0.15, 0.5),
                  centre=None, samples: int = 4000, placement: str = "extreme",
                  step: float = TUBE_STEP):
    """Random pairs of geodesics crossing near ``centre``.

    The crossing angle is drawn as ``k * delta / lam`` with ``k`` in
    ``angle_scale`` so trials straddle the separation threshold.  The common
    point a is taken from the sampled intersection: the point farthest from
    the intersection's mean ("extreme", the hardest case) or a random one.
    """
    if placement not in ("extreme", "random"):
        raise DomainError("placement is 'extreme' or 'random'")
    rng = np.random.default_rng(seed)
    n = patch.n
    centre = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    out = []
    while len(out) < trials:
        delta = rng.uniform(*delta_range)
        lam = rng.uniform(*lam_range)
        phi = rng.uniform(*angle_scale) * delta / lam
        p0 = centre + rng.uniform(-0.1, 0.1, n)
        e1 = _random_unit(rng, n)
        perp = _random_unit(rng, n)
        perp -= (perp @ e1) * e1
        perp /= np.linalg.norm(perp)
        e2 = math.cos(phi) * e1 + math.sin(phi) * perp
        starts, covs = [], []
        for e in (e1, e2):
            off = _random_unit(rng, n)
            off -= (off @ e) * e
            off *= 0.9 * delta * rng.random() / np.linalg.norm(off)
            x0 = p0 + off
            xi = patch.lower_index(x0, e)
            starts.append(x0)
            covs.append(xi / patch.hamiltonian(x0, xi))
        shift = rng.uniform(0.3, 0.7)
        t, X, XI, alive = flow_batch(patch, np.array(starts), np.array(covs),
                                     (-shift * r, (1 - shift) * r), step)
        if not alive.all():
            continue
        h = float(np.min(np.diff(t)))
        g1 = GeodesicPath(t, X[:, 0], XI[:, 0], h)
        g2 = GeodesicPath(t, X[:, 1], XI[:, 1], h)
        inter = intersection_points(g1, g2, delta, rng, samples)
        if len(inter) == 0:
            continue
        if placement == "extreme":
            a = inter[np.argmax(np.linalg.norm(inter - inter.mean(axis=0), axis=1))]
        else:
            a = inter[rng.integers(len(inter))]
        theta = cosphere_theta(g1, g2)
        ok = spread_check(patch, g1, g2, a, delta, lam, samples, seed=len(out))
        out.append(SpreadTrial(theta, delta, lam, ok))
    return out


def calibrate_spread_constant(trials: Sequence[SpreadTrial], safety: float = 0.8) -> float:
    """Largest c keeping every failed trial outside the hypothesis, times ``safety``."""
    failing = [t.critical_c for t in trials if not t.passed]
    if not failing:
        return safety * max(t.critical_c for t in trials)
    return safety * min(failing)


def spread_pass_rate(trials: Sequence[SpreadTrial], c: float):
    """(pass rate, count) over trials satisfying theta >= delta / (c lam)."""
    hyp = [t for t in trials if t.theta >= t.delta / (c * t.lam)]
    if not hyp:
        return float("nan"), 0
    return sum(t.passed for t in hyp) / len(hyp), len(hyp)


# bush experiment ----------------------------------------------------------------------

@dataclass(frozen=True)
class BoxSet:
    """Indicator of an axis-aligned box, with its Lebesgue measure."""

    lower: tuple
    upper: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lower)) & (x <= np.asarray(self.upper)), axis=-1).astype(float)

    @property
    def measure(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    def support_distance(self, x):
        x = np.asarray(x, dtype=float)
        gap = np.maximum(np.asarray(self.lower) - x, 0) + np.maximum(x - np.asarray(self.upper), 0)
        return np.linalg.norm(gap, axis=-1)


@dataclass(frozen=True)
class BallSet:
    """Indicator of a closed chart ball, with its Lebesgue measure."""

    center: tuple
    radius: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (np.linalg.norm(x - np.asarray(self.center), axis=-1) <= self.radius).astype(float)

    @property
    def measure(self) -> float:
        return ball_volume(len(self.center), self.radius)

    def support_distance(self, x):
        d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.center), axis=-1)
        return np.maximum(d - self.radius, 0.0)


@dataclass(frozen=True)
class TubeSet:
    """Indicator of a tube, with its measure estimated once."""

    tube: Tube
    measure: float

    def __call__(self, x):
        return self.tube.contains(np.atleast_2d(x)).astype(float)

    def support_distance(self, x):
        return np.maximum(self.tube.distance(np.atleast_2d(x)) - self.tube.delta, 0.0)


@dataclass(frozen=True)
class EmptySet:
    measure: float = 0.0

    def __call__(self, x):
        return np.zeros(np.asarray(x).shape[:-1])

    def support_distance(self, x):
        return np.full(np.asarray(x).shape[:-1], np.inf)


@dataclass
class BushReport:
    delta: float
    lam: float
    A: float
    M: int
    superlevel_points: int
    bound_unit: float
    C_prime: Optional[float]
    bush_size: int
    bush_point: Optional[np.ndarray]
    pairs_tested: int
    pairs_hypothesis: int
    pairs_disjoint: int

    @property
    def ratio(self) -> float:
        """M over lambda^-2 delta^-2(n-1) |E|^2."""
        return self.M / self.bound_unit if self.bound_unit > 0 else (0.0 if self.M == 0 else np.inf)

    @property
    def within_bound(self) -> Optional[bool]:
        if self.C_prime is None:
            return None
        return self.M <= self.C_prime * self.bound_unit

    @property
    def disjoint_rate(self) -> float:
        return self.pairs_disjoint / self.pairs_hypothesis if self.pairs_hypothesis else float("nan")


def _cone_directions(n, axis, half_angle, rings=2, per_ring=6):
    """Unit vectors within ``half_angle`` of +e_axis."""
    e = np.zeros(n)
    e[axis] = 1.0
    others = [j for j in range(n) if j != axis]
    dirs = [e]
    for k in range(1, rings + 1):
        ang = half_angle * k / rings
        for j in range(per_ring * k):
            v = np.zeros(n)
            u = np.zeros(n - 1)
            if n - 1 == 1:
                u[0] = 1.0 if j % 2 == 0 else -1.0
            else:
                phi = 2 * np.pi * j / (per_ring * k)
                u[0], u[1] = math.cos(phi), math.sin(phi)
            v[others] = u * math.sin(ang)
            v[axis] = math.cos(ang)
            dirs.append(v)
    return np.array(dirs)


@counted("tube_combinatorics.bush_experiment")
def bush_experiment(patch: MetricPatch, E, delta: float, lam: float, A: float = 2.0,
                    half_width: float = 0.4, grid_step: Optional[float] = None,
                    r: float = 1.0, level: float = 0.0, cone: float = 0.1,
                    C_prime: Optional[float] = None, c_sep: Optional[float] = None,
                    samples: int = 2000, tip_samples: int = 2000, seed: int = 0,
                    step: float = TUBE_STEP) -> BushReport:
    """Discrete restricted weak-type count on the hyperplane x_c = level.

    The vertical direction is the coupling axis (Euclidean patches use the
    last axis); lines in that direction are geodesics.  Grid points x' of
    the hyperplane within ``half_width`` are scanned, the maximal function
    of E over near-vertical tubes of length r centred at x' is evaluated,
    and a maximal A delta/lam separated subset of the points where it
    exceeds A lam is counted.
    """
    if not (0 < lam <= 1 and 0 < delta <= 1):
        raise DomainError("lambda and delta must lie in (0, 1]")
    n = patch.n
    axis = patch.coupling_axis if patch.coupling_axis is not None else n - 1
    spacing = A * delta / lam
    h = grid_step if grid_step is not None else spacing / 2
    ticks = np.arange(-half_width, half_width + 1e-12, h)
    others = [j for j in range(n) if j != axis]
    mesh = np.stack(np.meshgrid(*([ticks] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
    pts = np.zeros((len(mesh), n))
    pts[:, others] = mesh
    pts[:, axis] = level
    unit = lam ** -2 * delta ** (-2 * (n - 1)) * E.measure ** 2
    if E.measure == 0:
        return BushReport(delta, lam, A, 0, 0, unit, C_prime, 0, None, 0, 0, 0)
    dirs = _cone_directions(n, axis, cone)
    values = np.zeros(len(pts))
    best_path = [None] * len(pts)
    for i, x in enumerate(pts):
        xs = np.broadcast_to(x, dirs.shape)
        xi = dirs @ patch.metric(x)
        xi /= patch.hamiltonian(xs, xi)[:, None]
        t, X, XI, alive = flow_batch(patch, xs, xi, (-r / 2, r / 2), step)
        hh = float(np.min(np.diff(t)))
        for k in np.nonzero(alive)[0]:
            path = GeodesicPath(t, X[:, k], XI[:, k], hh)
            path = path.resample(max(hh, min(2 * delta, r / 8)))
            sd = E.support_distance(path.x)
            if np.min(sd) > delta + np.max(np.linalg.norm(np.diff(path.x, axis=0), axis=1)):
                continue
            rng = np.random.default_rng([seed, i, k])
            v = tube_average(patch, Tube(path, delta), E, rng, samples)
            if v > values[i]:
                values[i], best_path[i] = v, path
    sup = np.nonzero(values > A * lam)[0]
    fam = separated_family(pts[sup], spacing)
    chosen = sup[fam.indices]
    M = len(chosen)
    if M == 0:
        return BushReport(delta, lam, A, 0, 0, unit, C_prime, 0, None, 0, 0, 0)
    tubes = [Tube(best_path[i], delta) for i in chosen]
    # bush point: the sampled point of E lying in the most chosen tubes
    rng = np.random.default_rng([seed, 999])
    cand = []
    for T in tubes:
        s = T.sample(rng, tip_samples)
        s = s[E(s) > 0]
        cand.append(s[: max(1, tip_samples // 10)])
    cand = np.concatenate(cand)
    counts = np.zeros(len(cand), dtype=int)
    member = np.zeros((len(tubes), len(cand)), dtype=bool)
    for j, T in enumerate(tubes):
        member[j] = T.contains(cand)
    counts = member.sum(axis=0)
    best = int(np.argmax(counts))
    a = cand[best]
    through = np.nonzero(member[:, best])[0]
    tested = hyp = disjoint = 0
    for u in range(len(through)):
        for w in range(u + 1, len(through)):
            g1, g2 = tubes[through[u]].path, tubes[through[w]].path
            theta = cosphere_theta(g1, g2)
            tested += 1
            if c_sep is not None and theta < delta / (c_sep * lam):
                continue
            hyp += 1
            if spread_check(patch, g1, g2, a, delta, lam, tip_samples, seed=tested):
                disjoint += 1
    return BushReport(delta, lam, A, M, len(sup), unit, C_prime, len(through), a,
                      tested, hyp, disjoint)


# Nikodym-type plane --------------------------------------------------------------------

@dataclass
class DimensionReport:
    fit: ScalingFit
    witness_lengths: np.ndarray
    volumes: tuple

    @property
    def min_witness_length(self) -> float:
        return float(np.min(self.witness_lengths))


def plane_dimension(patch: MetricPatch) -> int:
    """Dimension of the plane the focusing geodesics flatten into."""
    if patch.family in ("three_d", "odd_focus"):
        return (patch.n + 1) // 2
    if patch.family == "even_focus":
        return (patch.n + 2) // 2
    raise DomainError("no focusing plane for this family")


def plane_neighbourhood_volume(n: int, m: int, radius: float, delta: float,
                               samples: int, rng: np.random.Generator) -> float:
    """MC volume of the delta-neighbourhood of {x_j = 0, j > m} intersected with |x| <= radius."""
    lo = np.concatenate([np.full(m, -radius - delta), np.full(n - m, -delta)])
    box = float(np.prod(-2 * lo))
    y = rng.uniform(lo, -lo, size=(samples, n))
    outer = np.maximum(np.linalg.norm(y[:, :m], axis=1) - radius, 0.0)
    d2 = np.sum(y[:, m:] ** 2, axis=1) + outer ** 2
    return box * float(np.mean(d2 <= delta * delta))


def witness_plane_length(patch: MetricPatch, x, r: float, radius: float,
                         step: float = 1e-3) -> float:
    """Length of the closed-form geodesic from x (length r) inside the plane and ball."""
    fan, t0 = fan_inverse(patch, x)
    path = fan_path(patch, fan, t0, t0 + r, step)
    m = plane_dimension(patch)
    _, partners, _ = fan_layout(patch)
    in_plane = np.all(path.x[:, partners] == 0.0, axis=1)
    in_ball = np.linalg.norm(path.x, axis=1) <= radius
    inside = in_plane & in_ball
    seg_in = inside[:-1] & inside[1:]
    return float(np.sum(np.diff(path.t)[seg_in]))


@counted("tube_combinatorics.dimension_experiment")
def dimension_experiment(patch: MetricPatch, deltas: Sequence[float], ball: Ball,
                         grid: int = 3, r: float = 2.0, radius: float = 1.0,
                         samples: int = 400_000, seed: int = 0,
                         tolerance: Optional[float] = None) -> DimensionReport:
    """Witness check on B and the volume scaling of the plane's neighbourhoods."""
    if patch.family not in ("three_d", "odd_focus"):
        raise DomainError("the sharp plane example needs an odd dimensional focusing family")
    pts, _ = ball.grid(grid)
    if len(pts) == 0:
        raise DomainError(f"a {grid}-point grid leaves no lattice point inside the ball")
    patch.check(pts)
    lengths = np.array([witness_plane_length(patch, x, r, radius) for x in pts])
    if np.any(lengths <= 0):
        raise CounterexampleViolation("a witness geodesic misses the plane")
    m = plane_dimension(patch)
    vols = []
    for j, d in enumerate(deltas):
        rng = np.random.default_rng([seed, j])
        vols.append((float(d), plane_neighbourhood_volume(patch.n, m, radius, d, samples, rng)))
    fit = slope_fit(vols)
    expected = (patch.n - 1) / 2
    if tolerance is not None:
        fit = fit.expect(expected, tolerance, f"plane neighbourhood n={patch.n}")
    return DimensionReport(fit, lengths, tuple(vols))


def calibrate_bush_constant(reports: Sequence[BushReport], safety: float = 2.0) -> float:
    """C' from Euclidean runs: the largest observed M / (lambda^-2 delta^-2(n-1) |E|^2)."""
    ratios = [r.ratio for r in reports if r.bound_unit > 0]
    if not ratios or max(ratios) == 0:
        raise DomainError("calibration runs produced no superlevel points")
    return safety * max(ratios)
