"""Canned experiments with the parameters tuned for desk-scale runs.

Both the command line runner and the acceptance tests call these, so a
number printed by one can be reproduced by the other.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError
from .geodesic_flow import (FanParams, PhasePoint, closed_form_fan, fan_covector, fan_jacobian,
                            fan_layout, flow)
from .metric_core import AlphaProfile, MetricPatch, curvature_component
from .nikodym_maximal import Ball, counterexample_scaling
from .oscillatory_lab import (build_family, chain_inequality_check, dual_tube_magnitudes,
                              overlap_count, overlap_exponent, square_function_exponent,
                              square_function_norm)
from .scaling import ScalingFit, slope_fit
from .tube_combinatorics import (BallSet, BoxSet, bush_experiment, calibrate_bush_constant,
                                 calibrate_spread_constant, dimension_experiment,
                                 spread_pass_rate, spread_trials)


def make_patch(family: str, n: int, profile: str = "exp_flat", k: int = 1,
               s_max: Optional[float] = None) -> MetricPatch:
    """Patch used by the studies: exp_flat lives on [-2, 2]^n, monomial on the default box."""
    if family == "euclidean":
        return MetricPatch.euclidean(n)
    if profile == "exp_flat":
        alpha, box = AlphaProfile.exp_flat(), (-2.0, 2.0)
    elif profile == "monomial":
        alpha, box = AlphaProfile.monomial(k, s_max), None
    else:
        raise DomainError(f"unknown profile {profile!r}")
    if family == "three_d":
        if n != 3:
            raise DomainError("three_d patches have n = 3")
        return MetricPatch.three_d(alpha, box)
    if family == "odd_focus":
        return MetricPatch.odd_focus(n, alpha, box)
    if family == "even_focus":
        return MetricPatch.even_focus(n, alpha, box)
    raise DomainError(f"unknown family {family!r}")


# geodesics ----------------------------------------------------------------------------

def random_fan(patch: MetricPatch, rng: np.random.Generator) -> FanParams:
    """Fan parameters whose geodesic stays in the box for t in [-1, 1].

    |d| is drawn from [0.15, 0.45] so the coupling coordinate t*w stays
    below 0.99 in absolute value.
    """
    free, _, carried = fan_layout(patch)
    nb = len(free) + (carried is not None)
    base = rng.uniform(-0.3, 0.3, nb)
    u = rng.standard_normal(len(free))
    u *= rng.uniform(0.15, 0.45) / np.linalg.norm(u)
    if patch.family == "three_d":
        return FanParams("three_d", base, float(np.arcsin(u[0])))
    return FanParams(patch.family, base, u)


@dataclass
class GeodesicCheck:
    family: str
    profile: str
    draws: int
    max_deviation: float
    max_drift: float


def geodesic_check(patch: MetricPatch, draws: int = 50, seed: int = 0,
                   t_span=(-1.0, 1.0), step: float = 1e-3) -> GeodesicCheck:
    """RK4 flow against the closed-form fan for random fan parameters."""
    rng = np.random.default_rng(seed)
    dev = drift = 0.0
    for _ in range(draws):
        fan = random_fan(patch, rng)
        start = PhasePoint(closed_form_fan(patch, fan, 0.0), fan_covector(patch, fan))
        path = flow(patch, start, t_span, step)
        exact = closed_form_fan(patch, fan, path.t)
        dev = max(dev, float(np.max(np.abs(path.x - exact))))
        drift = max(drift, float(path.drift(patch)))
    return GeodesicCheck(patch.family, patch.alpha.kind if patch.alpha else "none", draws, dev, drift)


def jacobian_check(n: int, k: int, ts: Sequence[float] = (-0.6, -0.3, 0.3, 0.6)) -> float:
    """Largest relative gap between the fan Jacobian at zero direction and |A(t)|^((n-1)/2)."""
    family = "three_d" if n == 3 else "odd_focus"
    patch = make_patch(family, n, "monomial", k, s_max=0.99)
    free, _, _ = fan_layout(patch)
    worst = 0.0
    for t in ts:
        fan = FanParams(family, np.zeros(len(free)), 0.0 if n == 3 else np.zeros(len(free)))
        J = fan_jacobian(patch, fan, t)
        ref = abs(float(patch.alpha.primitive(t))) ** ((n - 1) / 2)
        worst = max(worst, abs(J - ref) / ref)
    return worst


def curvature_at_zero(k: int = 1) -> float:
    patch = make_patch("three_d", 3, "monomial", k)
    return float(curvature_component(patch, 3, (2, 3, 2), np.zeros(3)))


def curvature_order(k: int, exponents: Sequence[int] = (3, 4, 5, 6, 7)) -> ScalingFit:
    """Fit of log|R^3_232| against log|x_2|; the vanishing order is the slope."""
    patch = make_patch("three_d", 3, "monomial", k)
    pts = []
    for j in exponents:
        s = 2.0 ** -j
        pts.append((s, abs(curvature_component(patch, 3, (2, 3, 2), np.array([0.0, s, 0.0])))))
    return slope_fit(pts, label=f"curvature order k={k}")


# maximal function counterexamples -----------------------------------------------------

@dataclass(frozen=True)
class ScalingPreset:
    family: str
    n: int
    profile: str
    variant: str
    p: float
    tolerance: float
    ball_center: tuple
    ball_radius: float
    grid: int
    c: float
    r: float
    k: int = 1
    max_directions: int = 128


def _axis_center(n, axis, s):
    x = [0.0] * n
    x[axis] = s
    return tuple(x)


PRESETS = {
    "flat_slab": ScalingPreset("three_d", 3, "exp_flat", "flat_slab", 2.5, 0.15,
                               (0.0, -0.9, 0.0), 0.03, 2, 0.5, 2.0),
    "monomial_slab": ScalingPreset("three_d", 3, "monomial", "monomial_slab", 3.0, 0.15,
                                   (0.0, -0.6, 0.0), 0.03, 2, 0.5, 1.3, k=2),
    "odd_slab": ScalingPreset("odd_focus", 5, "exp_flat", "odd_slab", 3.0, 0.2,
                              _axis_center(5, 2, -0.9), 0.05, 3, 0.5, 2.0, max_directions=64),
    "even_slab": ScalingPreset("even_focus", 4, "exp_flat", "even_slab", 3.0, 0.2,
                               _axis_center(4, 2, -0.9), 0.05, 3, 0.5, 2.0, max_directions=64),
}


def preset_for(n: int, profile: str) -> ScalingPreset:
    if n == 3:
        return PRESETS["flat_slab" if profile == "exp_flat" else "monomial_slab"]
    return PRESETS["odd_slab" if n % 2 else "even_slab"]


def nikodym_scaling(preset: ScalingPreset, deltas: Sequence[float] = tuple(2.0 ** -j for j in range(3, 8)),
                    samples: int = 20_000, seed: int = 0, p: Optional[float] = None,
                    max_directions: Optional[int] = None, workers: Optional[int] = 1):
    """(fit, per-width results) for one counterexample preset."""
    patch = make_patch(preset.family, preset.n, preset.profile, preset.k)
    ball = Ball(preset.ball_center, preset.ball_radius)
    return counterexample_scaling(
        patch, preset.variant, preset.p if p is None else p, deltas, ball,
        tolerance=preset.tolerance, grid=preset.grid, c=preset.c, k=preset.k, r=preset.r,
        anchor=0.0, witness=True,
        max_directions=preset.max_directions if max_directions is None else max_directions,
        samples=samples, seed=seed, workers=workers)


# tube combinatorics -------------------------------------------------------------------

@dataclass
class SpreadStudy:
    c: float
    calibration_trials: int
    curved_trials: int
    hypothesis_trials: int
    pass_rate: float


def spread_study(calibration_trials: int = 300, curved_trials: int = 1000, seed: int = 0,
                 samples: int = 4000) -> SpreadStudy:
    """Calibrate c on the flat patch, then test the curved three_d k=1 patch."""
    flat = spread_trials(MetricPatch.euclidean(3), calibration_trials, seed=seed, samples=samples)
    c = calibrate_spread_constant(flat)
    curved = spread_trials(make_patch("three_d", 3, "monomial", 1), curved_trials,
                           seed=seed + 1, samples=samples)
    rate, count = spread_pass_rate(curved, c)
    return SpreadStudy(c, calibration_trials, curved_trials, count, rate)


BUSH_SLAB = BoxSet((-0.2, -0.5, -0.5), (0.2, 0.5, 0.5))
BUSH_LAMBDA = 0.25


def _bush_ball(patch):
    c = [0.0, 0.0, 0.0]
    c[patch.coupling_axis if patch.coupling_axis is not None else 2] = 0.35
    return BallSet(tuple(c), 0.1)


@dataclass
class BushStudy:
    C_prime: float
    c_sep: float
    slab_fit: ScalingFit
    reports: list = field(default_factory=list)

    @property
    def all_within(self) -> bool:
        return all(r.within_bound for r in self.reports)

    @property
    def pairs_hypothesis(self) -> int:
        return sum(r.pairs_hypothesis for r in self.reports)

    @property
    def pairs_disjoint(self) -> int:
        return sum(r.pairs_disjoint for r in self.reports)


def _bush_runs(patch, deltas, c_sep, C_prime, samples, seed):
    runs = []
    for j, d in enumerate(deltas):
        runs.append(bush_experiment(patch, BUSH_SLAB, d, BUSH_LAMBDA, A=2.0, C_prime=C_prime,
                                    c_sep=c_sep, samples=samples, seed=seed + j))
    for j, lam in enumerate((0.1, 0.15)):
        runs.append(bush_experiment(patch, _bush_ball(patch), deltas[-1], lam, A=1.0, cone=0.5,
                                    half_width=0.25, C_prime=C_prime, c_sep=c_sep,
                                    samples=samples, seed=seed + 100 + j))
    return runs


def bush_study(c_sep: float, deltas: Sequence[float] = tuple(2.0 ** -j for j in range(3, 7)),
               samples: int = 2000, seed: int = 0) -> BushStudy:
    """C' from flat runs, then the same runs on the curved three_d k=1 patch."""
    flat = _bush_runs(MetricPatch.euclidean(3), deltas, c_sep, None, samples, seed)
    C_prime = calibrate_bush_constant(flat)
    curved = _bush_runs(make_patch("three_d", 3, "monomial", 1), deltas, c_sep, C_prime,
                        samples, seed)
    fit = slope_fit([(r.delta, r.M) for r in curved[:len(deltas)]], label="bush count")
    return BushStudy(C_prime, c_sep, fit, curved)


def dimension_study(n: int, deltas: Sequence[float] = tuple(2.0 ** -j for j in range(6, 11)),
                    samples: int = 400_000, seed: int = 0):
    family = "three_d" if n == 3 else "odd_focus"
    patch = make_patch(family, n, "exp_flat")
    centre = _axis_center(n, patch.coupling_axis, -0.9)
    tol = 0.05 if n == 3 else 0.1
    return dimension_experiment(patch, deltas, Ball(centre, 0.05), grid=3, r=2.0,
                                samples=samples, seed=seed, tolerance=tol)


# oscillatory integrals ----------------------------------------------------------------

OVERLAP_C = 2.0
OVERLAP_RADIUS = 0.5


def oscillatory_patch(n: int, family: Optional[str] = None) -> MetricPatch:
    if family == "euclidean":
        return MetricPatch.euclidean(n)
    return make_patch("odd_focus" if n % 2 else "even_focus", n, "exp_flat")


def dual_tube_study(patch: MetricPatch, lambdas: Sequence[float], c: float = 0.5,
                    y_samples: int = 4, seed: int = 0, tolerance: float = 0.15):
    rows = []
    for lam in lambdas:
        mean, err, meas = dual_tube_magnitudes(patch, lam, c, y_samples=y_samples, seed=seed)
        rows.append((lam, mean, err, meas))
    fit = slope_fit([(r[0], r[1]) for r in rows], label=f"dual tube n={patch.n} {patch.family}")
    return fit.expect(-(patch.n - 1) / 2, tolerance), rows


def overlap_study(patch: MetricPatch, lambdas: Sequence[float], probes: int = 20_000,
                  seed: int = 0, tolerance: float = 0.1, square_q: Sequence[float] = (),
                  samples: int = 100_000):
    """Overlap fit plus optional square-function fits sharing the same families."""
    over, sq = [], {q: [] for q in square_q}
    for j, lam in enumerate(lambdas):
        fam = build_family(patch, lam, OVERLAP_C, OVERLAP_RADIUS)
        over.append((lam, overlap_count(fam, probes, seed + j)))
        for q in square_q:
            sq[q].append((lam, square_function_norm(fam, q, samples, seed + j)))
    fit = slope_fit(over, label=f"overlap n={patch.n}").expect(overlap_exponent(patch), tolerance)
    sq_fits = {q: slope_fit(v, label=f"square function n={patch.n} q'={q:g}").expect(
        float(square_function_exponent(patch.n, q)), 0.15) for q, v in sq.items()}
    return fit, sq_fits


def chain_study(n: int, dual: ScalingFit, square_fits: dict, q: Optional[float] = None):
    return chain_inequality_check(n, dual.slope, {k: v.slope for k, v in square_fits.items()}, q)
