"""Unit-speed Hamiltonian geodesic flow and the closed-form geodesic fans.

The flow integrates

    dx/dt = G(x) xi / p,     dxi/dt = -(d p / d x)

with classical RK4.  Only the coupling coordinate enters ``alpha`` so the
space derivative of ``p`` has a single nonzero component,
``alpha'(x_c) * sum_pairs xi_a xi_b / p``.

The fans are explicit geodesics with constant covector.  For a direction
vector ``d`` (``d = sin(theta)`` in the three dimensional family) and
``w = sqrt(1 - |d|^2)``:

* free coordinates move linearly, ``x_i = b_i + t d_i``;
* the coupling coordinate is ``t w``;
* the partner of free coordinate ``i`` is ``d_i A(t w) / w`` with ``A`` the
  primitive of alpha.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coverage import counted
from .errors import DomainError, InstabilityError, TruncationError
from .metric_core import MetricPatch

DEFAULT_STEP = 1e-3
DRIFT_LIMIT = 1e-6
UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A point of the cotangent bundle."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @classmethod
    def unit(cls, patch: MetricPatch, x, xi) -> "PhasePoint":
        """Rescale xi onto the unit cosphere at x."""
        p = float(patch.hamiltonian(x, xi))
        if p == 0:
            raise DomainError("zero covector cannot be normalized")
        return cls(x, np.asarray(xi, dtype=float) / p)

    @classmethod
    def from_velocity(cls, patch: MetricPatch, x, v) -> "PhasePoint":
        """Unit covector dual to the tangent direction v."""
        return cls.unit(patch, x, patch.lower_index(x, v))

    def is_unit(self, patch: MetricPatch, tol: float = UNIT_TOL) -> bool:
        return abs(float(patch.hamiltonian(self.x, self.xi)) - 1.0) <= tol


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """Samples (t, x(t), xi(t)) of a unit-speed geodesic on a uniform grid."""

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    step: float

    def __len__(self):
        return len(self.t)

    @property
    def length(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def samples(self):
        return [(float(t), PhasePoint(x, xi)) for t, x, xi in zip(self.t, self.x, self.xi)]

    def start(self) -> PhasePoint:
        return PhasePoint(self.x[0], self.xi[0])

    def end(self) -> PhasePoint:
        return PhasePoint(self.x[-1], self.xi[-1])

    def drift(self, patch: MetricPatch) -> float:
        p = patch.hamiltonian(self.x, self.xi, check=False)
        return float(np.max(np.abs(p - 1.0)))

    def velocity(self, patch: MetricPatch) -> np.ndarray:
        return _hamilton_rhs(patch, self.x, self.xi)[0]

    def metric_length(self, patch: MetricPatch) -> float:
        """Trapezoid rule on sqrt(v^T g v) with v from the Hamilton equations."""
        v = self.velocity(patch)
        g = patch.metric(self.x, check=False)
        speed = np.sqrt(np.einsum("ti,tij,tj->t", v, g, v))
        return float(np.trapezoid(speed, self.t))

    def resample(self, step: float) -> "GeodesicPath":
        """Keep every m-th sample, m = round(step / self.step), plus the endpoint."""
        m = max(1, int(round(step / self.step)))
        if m == 1:
            return self
        idx = np.arange(0, len(self.t), m)
        if idx[-1] != len(self.t) - 1:
            idx = np.append(idx, len(self.t) - 1)
        # non-uniform last gap is allowed only through this helper
        return GeodesicPath(self.t[idx], self.x[idx], self.xi[idx], self.step * m)

    def reversed(self) -> "GeodesicPath":
        """Same curve traversed backwards, reparameterized by -t."""
        return GeodesicPath(-self.t[::-1], self.x[::-1].copy(), -self.xi[::-1], self.step)


def _hamilton_rhs(patch: MetricPatch, x, xi):
    """(dx/dt, dxi/dt) for arrays of shape (..., n)."""
    xi = np.asarray(xi, dtype=float)
    if patch.coupling_axis is None:
        p = np.sqrt(np.sum(xi * xi, axis=-1))
        return xi / p[..., None], np.zeros_like(xi)
    c = patch.coupling_axis
    s = x[..., c]
    a = patch.alpha.value(s)
    S = np.zeros(xi.shape[:-1])
    for i, j in patch.pairs:
        S = S + xi[..., i] * xi[..., j]
    p2 = np.sum(xi * xi, axis=-1) + 2.0 * a * S
    p = np.sqrt(p2)
    dx = xi.copy()
    for i, j in patch.pairs:
        dx[..., i] += a * xi[..., j]
        dx[..., j] += a * xi[..., i]
    dx /= p[..., None]
    dxi = np.zeros_like(xi)
    dxi[..., c] = -patch.alpha.derivative(s) * S / p
    return dx, dxi


def integrate(patch: MetricPatch, x0, xi0, h: float, steps: int, speed=None):
    """Batched RK4 from states of shape (b, n).

    ``speed`` optionally rescales time per member (the flow runs for time
    ``speed * h * steps``).  Members leaving the box are frozen at their
    last interior state.  Returns (X, XI, alive) with X, XI of shape
    (steps + 1, b, n) and ``alive`` the mask of members that never left.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    xi = np.array(xi0, dtype=float, ndmin=2)
    b = x.shape[0]
    scale = np.full(b, h) if speed is None else h * np.asarray(speed, dtype=float)
    sc = scale[:, None]
    lo, hi = patch.lower, patch.upper
    X = np.empty((steps + 1, b, patch.n))
    XI = np.empty_like(X)
    X[0], XI[0] = x, xi
    alive = np.ones(b, dtype=bool)
    for k in range(steps):
        if alive.all():
            xa, xia, sa = x, xi, sc
        else:
            xa, xia, sa = x[alive], xi[alive], sc[alive]
        k1x, k1p = _hamilton_rhs(patch, xa, xia)
        k2x, k2p = _hamilton_rhs(patch, xa + 0.5 * sa * k1x, xia + 0.5 * sa * k1p)
        k3x, k3p = _hamilton_rhs(patch, xa + 0.5 * sa * k2x, xia + 0.5 * sa * k2p)
        k4x, k4p = _hamilton_rhs(patch, xa + sa * k3x, xia + sa * k3p)
        nx = xa + sa / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        nxi = xia + sa / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        inside = np.all((nx >= lo - 1e-12) & (nx <= hi + 1e-12), axis=-1)
        if alive.all():
            x = np.where(inside[:, None], nx, x)
            xi = np.where(inside[:, None], nxi, xi)
            alive = inside
        else:
            idx = np.nonzero(alive)[0]
            keep = idx[inside]
            x[keep], xi[keep] = nx[inside], nxi[inside]
            alive[idx[~inside]] = False
        X[k + 1], XI[k + 1] = x, xi
        if not alive.any():
            X[k + 2:], XI[k + 2:] = x, xi
            break
    return X, XI, alive


def _grid(duration: float, step: float):
    steps = int(np.ceil(abs(duration) / step - 1e-9))
    steps = max(steps, 1)
    return steps, abs(duration) / steps


def flow_batch(patch: MetricPatch, x0, xi0, t_span, step: float = DEFAULT_STEP,
               drift_limit: float = DRIFT_LIMIT):
    """Many geodesics at once on a shared grid.

    Returns (t, X, XI, alive) with X, XI of shape (len(t), b, n).  Members
    that leave the box are frozen and flagged in ``alive``; drift is only
    checked on surviving members.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t0 <= 0.0 <= t1 or t0 == t1:
        raise DomainError("t_span must contain 0 and have positive length")
    x0 = np.array(x0, dtype=float, ndmin=2)
    xi0 = np.array(xi0, dtype=float, ndmin=2)
    patch.check(x0)
    p0 = patch.hamiltonian(x0, xi0, check=False)
    if np.any(np.abs(p0 - 1.0) > UNIT_TOL):
        raise DomainError("start covector is not on the unit cosphere")
    ts, xs, xis = [], [], []
    alive = np.ones(x0.shape[0], dtype=bool)
    h_used = step
    for sign, dur in ((-1.0, -t0), (1.0, t1)):
        if dur <= 0:
            continue
        steps, h = _grid(dur, step)
        h_used = min(h_used, h)
        X, XI, ok = integrate(patch, x0, sign * xi0, h, steps)
        alive &= ok
        t = sign * h * np.arange(steps + 1)
        XI = sign * XI
        if sign < 0:
            t, X, XI = t[::-1], X[::-1], XI[::-1]
        if ts:
            t, X, XI = t[1:], X[1:], XI[1:]
        ts.append(t)
        xs.append(X)
        xis.append(XI)
    t = np.concatenate(ts)
    X = np.concatenate(xs)
    XI = np.concatenate(xis)
    if alive.any():
        p = patch.hamiltonian(X[:, alive], XI[:, alive], check=False)
        drift = float(np.max(np.abs(p - 1.0)))
        if drift > drift_limit:
            raise InstabilityError(f"Hamiltonian drift {drift:.3g} exceeds {drift_limit:g}")
    return t, X, XI, alive


@counted("geodesic_flow.flow")
def flow(patch: MetricPatch, start: PhasePoint, t_span, step: float = DEFAULT_STEP,
         drift_limit: float = DRIFT_LIMIT) -> GeodesicPath:
    """Geodesic through ``start`` sampled on ``[t0, t1]``.

    ``start`` sits at parameter 0, which must lie in ``t_span``.  The
    sample spacing is the largest value not exceeding ``step`` that divides
    each side evenly; with t0, t1 multiples of ``step`` it equals ``step``.
    """
    t, X, XI, alive = flow_batch(patch, start.x, start.xi, t_span, step, drift_limit)
    h = float(np.min(np.diff(t)))
    if not alive[0]:
        X0 = X[:, 0]
        frozen = np.all(np.diff(X0, axis=0) == 0, axis=1)
        # keep the stretch between the first and last moving samples around 0
        i0 = int(np.argmin(np.abs(t)))
        lo = i0
        while lo > 0 and not frozen[lo - 1]:
            lo -= 1
        hi = i0
        while hi < len(t) - 1 and not frozen[hi]:
            hi += 1
        partial = GeodesicPath(t[lo:hi + 1], X0[lo:hi + 1], XI[lo:hi + 1, 0], h)
        raise TruncationError("geodesic left the coordinate box", partial=partial)
    return GeodesicPath(t, X[:, 0], XI[:, 0], h)


@dataclass(frozen=True)
class FanParams:
    """Parameters of one closed-form fan geodesic.

    ``base`` holds the free coordinates (one for ``three_d``, ``(n-1)/2`` for
    ``odd_focus``, ``n/2`` for ``even_focus`` where the last one is carried
    unchanged).  ``theta`` is an angle for ``three_d`` and a direction
    vector for the other families.
    """

    family: str
    base: tuple
    theta: object

    def __post_init__(self):
        base = tuple(float(b) for b in np.atleast_1d(self.base))
        object.__setattr__(self, "base", base)
        if self.family == "three_d":
            th = float(np.asarray(self.theta).reshape(-1)[0]) if np.ndim(self.theta) else float(self.theta)
            if not abs(th) < np.pi / 2:
                raise DomainError("three_d fan angle must lie in (-pi/2, pi/2)")
            object.__setattr__(self, "theta", th)
        elif self.family in ("odd_focus", "even_focus"):
            th = tuple(float(v) for v in np.atleast_1d(self.theta))
            norm2 = sum(v * v for v in th)
            # odd fans allow |theta|^2 < 1/2, even fans |theta| < 1/2
            bound = 0.5 if self.family == "odd_focus" else 0.25
            if not norm2 < bound:
                raise DomainError("fan direction outside the admissible ball")
            object.__setattr__(self, "theta", th)
        else:
            raise DomainError(f"no closed-form fan for family {self.family!r}")

    @property
    def direction(self) -> np.ndarray:
        if self.family == "three_d":
            return np.array([np.sin(self.theta)])
        return np.array(self.theta)

    @property
    def vector(self) -> np.ndarray:
        """Flat parameter vector (base..., theta...)."""
        th = [self.theta] if self.family == "three_d" else list(self.theta)
        return np.array(list(self.base) + th)


def fan_layout(patch: MetricPatch):
    """(free coordinates, partner coordinates, carried coordinate).

    ``free[i]`` moves with direction component ``i``; ``partner[i]`` is the
    coordinate coupled to it.  ``carried`` is the untouched free coordinate
    of the even family (or None).
    """
    fam = patch.family
    if fam not in ("three_d", "odd_focus", "even_focus"):
        raise DomainError(f"no closed-form fan for family {fam!r}")
    c = patch.coupling_axis
    partner_of = {}
    for a, b in patch.pairs:
        partner_of[a] = b
    free = sorted(partner_of)
    partners = [partner_of[i] for i in free]
    carried = c - 1 if fam == "even_focus" else None
    return free, partners, carried


def _check_family(patch: MetricPatch, fan: FanParams):
    if fan.family != patch.family:
        raise DomainError(f"fan family {fan.family} does not match patch {patch.family}")
    free, _, carried = fan_layout(patch)
    nb = len(free) + (carried is not None)
    if len(fan.base) != nb or len(fan.direction) != len(free):
        raise DomainError("fan parameters have the wrong number of components")


def fan_points(patch: MetricPatch, base, d, t) -> np.ndarray:
    """Vectorized closed-form fan: base (..., nb), d (..., m), t (...) -> (..., n)."""
    free, partners, carried = fan_layout(patch)
    base = np.asarray(base, dtype=float)
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    w = np.sqrt(1.0 - np.sum(d * d, axis=-1))
    shape = np.broadcast_shapes(base.shape[:-1], d.shape[:-1], t.shape)
    out = np.zeros(shape + (patch.n,))
    s = t * w
    A = patch.alpha.primitive(s)
    for i, (f, q) in enumerate(zip(free, partners)):
        out[..., f] = base[..., i] + t * d[..., i]
        out[..., q] = d[..., i] * A / w
    if carried is not None:
        out[..., carried] = base[..., -1]
    out[..., patch.coupling_axis] = s
    return out


@counted("geodesic_flow.closed_form_fan")
def closed_form_fan(patch: MetricPatch, fan: FanParams, t) -> np.ndarray:
    """Point(s) of the fan geodesic at parameter(s) t."""
    _check_family(patch, fan)
    return fan_points(patch, np.array(fan.base), fan.direction, t)


def fan_covector(patch: MetricPatch, fan: FanParams) -> np.ndarray:
    """The constant unit covector carried by a fan geodesic."""
    _check_family(patch, fan)
    free, _, _ = fan_layout(patch)
    d = fan.direction
    xi = np.zeros(patch.n)
    xi[free] = d
    xi[patch.coupling_axis] = np.sqrt(1.0 - np.sum(d * d))
    return xi


def fan_path(patch: MetricPatch, fan: FanParams, t0: float, t1: float,
             step: float = DEFAULT_STEP) -> GeodesicPath:
    """The fan geodesic on [t0, t1] as a GeodesicPath (exact positions)."""
    steps, h = _grid(t1 - t0, step)
    t = t0 + h * np.arange(steps + 1)
    x = closed_form_fan(patch, fan, t)
    xi = np.broadcast_to(fan_covector(patch, fan), x.shape).copy()
    return GeodesicPath(t, x, xi, h)


@counted("geodesic_flow.fan_jacobian")
def fan_jacobian(patch: MetricPatch, fan: FanParams, t: float, h: float = 1e-5) -> float:
    """|det| of d(base, theta, t) -> fan point, by central differences."""
    _check_family(patch, fan)
    q0 = np.append(fan.vector, float(t))
    nb = len(fan.base)
    n = patch.n

    def point(q):
        base, th, tt = q[:nb], q[nb:-1], q[-1]
        d = np.sin(th) if patch.family == "three_d" else th
        return fan_points(patch, base, d, tt)

    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (point(q0 + e) - point(q0 - e)) / (2.0 * h)
    return float(abs(np.linalg.det(J)))


def fan_inverse(patch: MetricPatch, x):
    """Fan parameters and t with closed_form_fan(fan, t) = x.

    Works on single points or arrays of shape (..., n); for arrays returns
    (base, d, t) arrays instead of FanParams.  Needs ``A(x_c) != 0``.
    """
    x = np.asarray(x, dtype=float)
    free, partners, carried = fan_layout(patch)
    s = x[..., patch.coupling_axis]
    A = patch.alpha.primitive(s)
    if np.any(A == 0):
        raise DomainError("fan inversion needs a nonzero primitive at the coupling coordinate")
    u = x[..., partners] / A[..., None]
    norm = np.sqrt(1.0 + np.sum(u * u, axis=-1))
    d = u / norm[..., None]
    w = 1.0 / norm
    t = s / w
    base = x[..., free] - t[..., None] * d
    if carried is not None:
        base = np.concatenate([base, x[..., [carried]]], axis=-1)
    if x.ndim > 1:
        return base, d, t
    theta = float(np.arcsin(d[0])) if patch.family == "three_d" else tuple(d)
    return FanParams(patch.family, tuple(base), theta), float(t)
