"""Perturbation profiles and the coupled cometric families.

Every metric here has the cometric

    g^{jk}(x) = I + alpha(x_c) * P

where ``x_c`` is a single coupling coordinate and ``P`` is the symmetric
0/1 matrix of a set of disjoint index pairs that never contain ``c``.
Each coupled pair is an independent 2x2 block ``[[1, a], [a, 1]]`` so the
metric, determinant and volume density all have closed forms.

Indices are 0-based throughout the code.  ``curvature_component`` is the
one exception: it takes tensor indices 1-based, the usual way of writing
components such as ``R^3_{232}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from .coverage import counted
from .errors import DomainError, PositiveDefinitenessError, SingularityError

FAMILIES = ("euclidean", "three_d", "odd_focus", "even_focus")
PROFILES = ("exp_flat", "monomial")

# exp(1/s) is below the smallest normal double once 1/s < log(tiny)
_EXP_CUTOFF = float(np.log(np.finfo(float).tiny))
_PRIMITIVE_SPACING = 2e-3
_PRIMITIVE_TOL = 1e-12


@lru_cache(maxsize=8)
def _exp_flat_table(s_max: float):
    """Nodes and values of the exp-flat primitive on [-s_max, 0]."""
    count = max(int(np.ceil(s_max / _PRIMITIVE_SPACING)), 8)
    nodes = np.linspace(-s_max, 0.0, count + 1)
    pieces = np.empty(count)
    for i in range(count):
        pieces[i], _ = quad(
            lambda s: np.exp(1.0 / s) if 1.0 / s > _EXP_CUTOFF else 0.0,
            nodes[i], nodes[i + 1],
            epsabs=_PRIMITIVE_TOL / count, epsrel=0.0, limit=200,
        )
    # primitive(s) = -int_s^0 alpha, accumulated from the right end
    values = np.zeros(count + 1)
    values[:-1] = -np.cumsum(pieces[::-1])[::-1]
    slopes = np.zeros(count + 1)
    neg = nodes < 0
    with np.errstate(under="ignore"):
        slopes[neg] = np.where(1.0 / nodes[neg] > _EXP_CUTOFF, np.exp(1.0 / nodes[neg]), 0.0)
    return CubicHermiteSpline(nodes, values, slopes, extrapolate=False)


@dataclass(frozen=True)
class AlphaProfile:
    """The perturbation function alpha and its primitive.

    ``kind`` is ``"exp_flat"`` (``e^{1/s}`` for ``s < 0``, zero after) or
    ``"monomial"`` (``s**k``).  ``s_max`` is the half-width of the argument
    interval the profile is used on.  Monomials degenerate at ``|s| = 1`` so
    their ``s_max`` must stay below 1 (default 0.75).  The exp-flat profile
    satisfies ``|alpha| < 1`` on the whole line; its ``s_max`` (default 4)
    only sets the extent of the tabulated primitive.
    """

    kind: str = "exp_flat"
    k: int = 1
    s_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "monomial":
            if int(self.k) != self.k or self.k < 1:
                raise ValueError("monomial order k must be a positive integer")
            if self.s_max is None:
                object.__setattr__(self, "s_max", 0.75)
            if not 0.0 < self.s_max < 1.0:
                raise ValueError("monomial profiles need 0 < s_max < 1")
        else:
            if self.s_max is None:
                object.__setattr__(self, "s_max", 4.0)
            if not self.s_max > 0:
                raise ValueError("s_max must be positive")
        object.__setattr__(self, "s_max", float(self.s_max))

    @classmethod
    def exp_flat(cls, s_max: Optional[float] = None) -> "AlphaProfile":
        return cls("exp_flat", 1, s_max)

    @classmethod
    def monomial(cls, k: int, s_max: Optional[float] = None) -> "AlphaProfile":
        return cls("monomial", k, s_max)

    @property
    def alpha_max(self) -> float:
        """sup |alpha| over [-s_max, s_max]."""
        if self.kind == "monomial":
            return self.s_max ** self.k
        return float(np.exp(-1.0 / self.s_max))

    def value(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "monomial":
            return s ** self.k
        out = np.zeros_like(s)
        live = (s < 0) & (1.0 / np.where(s < 0, s, -1.0) > _EXP_CUTOFF)
        out[live] = np.exp(1.0 / s[live])
        return out

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "monomial":
            return self.k * s ** (self.k - 1)
        out = np.zeros_like(s)
        live = (s < 0) & (1.0 / np.where(s < 0, s, -1.0) > _EXP_CUTOFF)
        sl = s[live]
        out[live] = -np.exp(1.0 / sl) / (sl * sl)
        return out

    def primitive(self, s):
        """int_0^s alpha(u) du."""
        s = np.asarray(s, dtype=float)
        if self.kind == "monomial":
            return s ** (self.k + 1) / (self.k + 1)
        shape = s.shape
        s = np.atleast_1d(s)
        out = np.zeros_like(s)
        neg = s < 0
        if not np.any(neg):
            return out.reshape(shape)
        spline = _exp_flat_table(self.s_max)
        inside = neg & (s >= -self.s_max)
        out[inside] = spline(s[inside])
        for idx in zip(*np.nonzero(neg & ~inside)):
            val, _ = quad(lambda u: np.exp(1.0 / u), float(s[idx]), 0.0,
                          epsabs=_PRIMITIVE_TOL, epsrel=0.0, limit=400)
            out[idx] = -val
        return out.reshape(shape)

    def __call__(self, s):
        return self.value(s)


def _family_layout(n: int, family: str):
    """(coupling axis, coupled pairs) for a family, 0-based."""
    if family == "euclidean":
        if n < 1:
            raise ValueError("dimension must be positive")
        return None, ()
    if family == "three_d":
        if n != 3:
            raise ValueError("three_d requires n = 3")
        return 1, ((0, 2),)
    if family == "odd_focus":
        if n < 3 or n % 2 == 0:
            raise ValueError("odd_focus requires odd n >= 3")
        m = (n - 1) // 2
        return m, tuple((m - j, m + j) for j in range(1, m + 1))
    if family == "even_focus":
        if n < 4 or n % 2:
            raise ValueError("even_focus requires even n >= 4")
        m = n // 2
        return m, tuple((m - 1 - j, m + j) for j in range(1, (n - 2) // 2 + 1))
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True, eq=False)
class MetricPatch:
    """One cometric family restricted to an axis-aligned coordinate box."""

    n: int
    family: str
    alpha: Optional[AlphaProfile] = None
    box: Optional[tuple] = None
    coupling_axis: Optional[int] = field(init=False, default=None)
    pairs: tuple = field(init=False, default=())

    def __post_init__(self):
        axis, pairs = _family_layout(self.n, self.family)
        object.__setattr__(self, "coupling_axis", axis)
        object.__setattr__(self, "pairs", pairs)
        if self.family != "euclidean" and self.alpha is None:
            raise ValueError(f"family {self.family} needs an AlphaProfile")
        if self.box is None:
            lo, hi = -np.ones(self.n), np.ones(self.n)
        else:
            lo = np.array(self.box[0], dtype=float) * np.ones(self.n)
            hi = np.array(self.box[1], dtype=float) * np.ones(self.n)
        if axis is not None:
            lo[axis] = max(lo[axis], -self.alpha.s_max)
            hi[axis] = min(hi[axis], self.alpha.s_max)
        if np.any(lo >= hi):
            raise ValueError("empty coordinate box")
        object.__setattr__(self, "box", (tuple(lo), tuple(hi)))

    # construction helpers
    @classmethod
    def euclidean(cls, n: int, box=None) -> "MetricPatch":
        return cls(n, "euclidean", None, box)

    @classmethod
    def three_d(cls, alpha: AlphaProfile, box=None) -> "MetricPatch":
        return cls(3, "three_d", alpha, box)

    @classmethod
    def odd_focus(cls, n: int, alpha: AlphaProfile, box=None) -> "MetricPatch":
        return cls(n, "odd_focus", alpha, box)

    @classmethod
    def even_focus(cls, n: int, alpha: AlphaProfile, box=None) -> "MetricPatch":
        return cls(n, "even_focus", alpha, box)

    @property
    def coupling_index(self) -> Optional[int]:
        """1-based coupling coordinate."""
        return None if self.coupling_axis is None else self.coupling_axis + 1

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.box[0])

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.box[1])

    @property
    def alpha_max(self) -> float:
        return 0.0 if self.alpha is None else self.alpha.alpha_max

    def with_box(self, box) -> "MetricPatch":
        return MetricPatch(self.n, self.family, self.alpha, box)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DomainError(f"expected points with {self.n} coordinates, got {x.shape}")
        if not np.all(self.contains(x)):
            raise DomainError("point outside the coordinate box")
        return x

    def alpha_at(self, x) -> np.ndarray:
        """alpha(x_c) for points x of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.coupling_axis is None:
            return np.zeros(x.shape[:-1])
        return self.alpha.value(x[..., self.coupling_axis])

    def dalpha_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.coupling_axis is None:
            return np.zeros(x.shape[:-1])
        return self.alpha.derivative(x[..., self.coupling_axis])

    def coupling_matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        for a, b in self.pairs:
            P[a, b] = P[b, a] = 1.0
        return P

    @counted("metric_core.cometric")
    def cometric(self, x, check: bool = True) -> np.ndarray:
        x = self.check(x) if check else np.asarray(x, dtype=float)
        a = self.alpha_at(x)
        G = np.broadcast_to(np.eye(self.n), x.shape[:-1] + (self.n, self.n)).copy()
        for i, j in self.pairs:
            G[..., i, j] = a
            G[..., j, i] = a
        return G

    @counted("metric_core.metric")
    def metric(self, x, check: bool = True) -> np.ndarray:
        """Inverse of the cometric, block by block."""
        x = self.check(x) if check else np.asarray(x, dtype=float)
        a = self.alpha_at(x)
        if np.any(np.abs(a) >= 1.0):
            raise SingularityError("|alpha| >= 1: metric is singular")
        g = np.broadcast_to(np.eye(self.n), x.shape[:-1] + (self.n, self.n)).copy()
        inv = 1.0 / (1.0 - a * a)
        for i, j in self.pairs:
            g[..., i, i] = inv
            g[..., j, j] = inv
            g[..., i, j] = -a * inv
            g[..., j, i] = -a * inv
        return g

    def det_cometric(self, x, check: bool = True) -> np.ndarray:
        x = self.check(x) if check else np.asarray(x, dtype=float)
        a = self.alpha_at(x)
        return (1.0 - a * a) ** self.num_pairs

    @counted("metric_core.volume_density")
    def volume_density(self, x, check: bool = True) -> np.ndarray:
        """sqrt(det g) = (1 - alpha^2)^(-m/2) with m coupled pairs."""
        x = self.check(x) if check else np.asarray(x, dtype=float)
        a = self.alpha_at(x)
        if np.any(np.abs(a) >= 1.0):
            raise SingularityError("|alpha| >= 1: metric is singular")
        return (1.0 - a * a) ** (-0.5 * self.num_pairs)

    def pair_product(self, xi) -> np.ndarray:
        """sum over coupled pairs of xi_a * xi_b."""
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1])
        for i, j in self.pairs:
            out = out + xi[..., i] * xi[..., j]
        return out

    def hamiltonian_squared(self, x, xi, check: bool = True) -> np.ndarray:
        x = self.check(x) if check else np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return np.sum(xi * xi, axis=-1) + 2.0 * self.alpha_at(x) * self.pair_product(xi)

    @counted("metric_core.hamiltonian")
    def hamiltonian(self, x, xi, check: bool = True) -> np.ndarray:
        """p(x, xi) = sqrt(xi^T G(x) xi)."""
        q = self.hamiltonian_squared(x, xi, check)
        if np.any(q < 0):
            raise PositiveDefinitenessError("negative cometric form: alpha left (-1, 1)")
        return np.sqrt(q)

    def lower_index(self, x, v, check: bool = True) -> np.ndarray:
        """g(x) v, turning a tangent vector into a covector."""
        g = self.metric(x, check)
        return np.einsum("...ij,...j->...i", g, np.asarray(v, dtype=float))

    def raise_index(self, x, xi, check: bool = True) -> np.ndarray:
        """G(x) xi, turning a covector into a tangent vector."""
        x = self.check(x) if check else np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        a = self.alpha_at(x)
        v = np.array(xi, dtype=float, copy=True)
        for i, j in self.pairs:
            v[..., i] = xi[..., i] + a * xi[..., j]
            v[..., j] = xi[..., j] + a * xi[..., i]
        return v


def christoffel(patch: MetricPatch, x, h: float = 1e-3) -> np.ndarray:
    """Gamma[i, j, k] = Gamma^i_{jk} by central differences of the metric."""
    x = np.asarray(x, dtype=float)
    n = patch.n
    E = np.eye(n) * h
    shifted = np.concatenate([x + E, x - E])
    if not np.all(patch.contains(shifted)):
        raise DomainError("finite-difference stencil leaves the box")
    g_shift = patch.metric(shifted, check=False)
    dg = (g_shift[:n] - g_shift[n:]) / (2.0 * h)  # dg[k, i, j] = d_k g_ij
    ginv = patch.cometric(x, check=False)
    # lowered symbols Gamma_{l j k} = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
    low = 0.5 * (np.einsum("jlk->ljk", dg) + np.einsum("klj->ljk", dg) - dg)
    return np.einsum("il,ljk->ijk", ginv, low)


def riemann(patch: MetricPatch, x, h: float = 1e-3) -> np.ndarray:
    """R[r, s, m, v] = R^r_{s m v} with the convention

    R^r_{smv} = d_m Gamma^r_{vs} - d_v Gamma^r_{ms}
                + Gamma^r_{ml} Gamma^l_{vs} - Gamma^r_{vl} Gamma^l_{ms}.
    """
    x = np.asarray(x, dtype=float)
    n = patch.n
    if not np.all(patch.contains(x + 2 * h)) or not np.all(patch.contains(x - 2 * h)):
        raise DomainError("curvature stencil (2h) leaves the box")
    gam = christoffel(patch, x, h)
    dgam = np.empty((n, n, n, n))  # dgam[m, r, v, s] = d_m Gamma^r_{vs}
    for m in range(n):
        e = np.zeros(n)
        e[m] = h
        dgam[m] = (christoffel(patch, x + e, h) - christoffel(patch, x - e, h)) / (2.0 * h)
    R = np.einsum("mrvs->rsmv", dgam) - np.einsum("vrms->rsmv", dgam)
    R += np.einsum("rml,lvs->rsmv", gam, gam) - np.einsum("rvl,lms->rsmv", gam, gam)
    return R


@counted("metric_core.curvature_component")
def curvature_component(patch: MetricPatch, upper: int, lower, x, h: float = 1e-3) -> float:
    """R^upper_{lower} at x, indices 1-based (``curvature_component(p, 3, (2, 3, 2), x)``)."""
    s, m, v = lower
    idx = (upper, s, m, v)
    if any(not 1 <= i <= patch.n for i in idx):
        raise DomainError(f"tensor indices must lie in 1..{patch.n}")
    R = riemann(patch, x, h)
    return float(R[upper - 1, s - 1, m - 1, v - 1])
