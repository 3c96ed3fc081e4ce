import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nikodym_lab.errors import DomainError, ResolutionError
from nikodym_lab.oscillatory_lab import (LAMBDA_MAX, Cylinder, CylinderFamily, CylinderField,
                                         adjoint_apply, build_family, chain_inequality_check,
                                         dual_tube_magnitudes, dual_tube_scaling, exact_exponents,
                                         exponent_threshold, farthest_point_centers, focus_axis,
                                         focus_point, focusing_ray, overlap_count, overlap_exponent,
                                         overlap_scaling, smooth_bump, square_function_exponent,
                                         square_function_norm)
from nikodym_lab.metric_core import MetricPatch
from nikodym_lab.studies import oscillatory_patch

P3 = oscillatory_patch(3)
P4 = oscillatory_patch(4)


def central_cylinder(patch, lam, c=0.5):
    y0 = focus_point(patch)
    P, v = focusing_ray(patch, y0)
    return y0, Cylinder(P, v, c * lam ** -0.5, focus_axis(patch))


def vertical_cylinder_volume(r):
    # {x_c >= 0, |x| <= 1, rho <= r}: integral of 2 pi rho sqrt(1 - rho^2)
    return 2 * math.pi / 3 * (1 - (1 - r * r) ** 1.5)


class TestThresholds:
    @pytest.mark.parametrize("n,q", [(3, Fraction(10, 3)), (4, Fraction(14, 5)), (5, Fraction(8, 3))])
    def test_exact(self, n, q):
        th = exponent_threshold(n)
        assert th.q == q
        assert th.baseline == Fraction(2 * n, n - 1)

    @pytest.mark.parametrize("n", range(3, 12))
    def test_above_baseline(self, n):
        th = exponent_threshold(n)
        assert th.q > th.baseline

    @pytest.mark.parametrize("n", [2, 1, 3.0])
    def test_domain(self, n):
        with pytest.raises(DomainError):
            exponent_threshold(n)


class TestChain:
    @pytest.mark.parametrize("n", range(3, 10))
    def test_exact_slopes_reproduce_threshold(self, n):
        dual, sq = exact_exponents(n)
        rep = chain_inequality_check(n, dual, sq)
        assert rep.exact and rep.implied == exponent_threshold(n).q

    def test_needs_two_q(self):
        dual, sq = exact_exponents(3)
        with pytest.raises(DomainError):
            chain_inequality_check(3, dual, {Fraction(2): sq[Fraction(2)]})

    def test_q_excluded(self):
        dual, sq = exact_exponents(3)
        assert chain_inequality_check(3, dual, sq, q=3.0).q_excluded is True
        assert chain_inequality_check(3, dual, sq, q=3.5).q_excluded is False

    def test_float_slopes_close(self):
        dual, sq = exact_exponents(4)
        noisy = {float(k): float(v) + 0.01 for k, v in sq.items()}
        rep = chain_inequality_check(4, float(dual) - 0.01, noisy)
        assert not rep.exact and rep.passed

    def test_square_exponent_at_two_vanishes_for_q_two(self):
        assert square_function_exponent(3, Fraction(2)) == 0


class TestCylinder:
    def test_vertical_measure(self):
        r = 0.05
        cyl = Cylinder(np.zeros(3), np.array([0.0, 1.0, 0.0]), r, 1)
        assert cyl.measure() == pytest.approx(vertical_cylinder_volume(r), rel=1e-3)

    def test_ray_clipped_at_origin(self):
        cyl = Cylinder(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.1, 1)
        assert cyl.distance(np.array([0.05, -0.5, 0.0])) == pytest.approx(math.hypot(0.05, 0.5))

    def test_missing_ball(self):
        cyl = Cylinder(np.array([3.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), 0.1, 1)
        assert cyl.empty and cyl.measure() == 0.0

    @pytest.mark.parametrize("patch", [P3, P4], ids=["n3", "n4"])
    def test_family_in_slab(self, patch):
        fam = build_family(patch, 256.0, 0.5, 0.25)
        rng = np.random.default_rng(0)
        pts = fam.sample_cylinders(rng, 4000)
        lo, hi = fam.slab_bounds()
        inside = fam.counts(pts) > 0
        assert inside.any()
        assert np.all((pts[inside] >= lo - 1e-12) & (pts[inside] <= hi + 1e-12))


class TestAdjoint:
    def test_zero_frequency_is_measure(self):
        y0, cyl = central_cylinder(P3, 256.0)
        val = adjoint_apply(P3, CylinderField(cyl), 0.0, y0)
        assert abs(val.imag) < 1e-15
        assert val.real == pytest.approx(cyl.measure(), rel=0.02)

    @pytest.mark.parametrize("patch,lam", [(P3, 64.0), (P3, 256.0), (P4, 64.0)])
    def test_phases_align_on_tube(self, patch, lam):
        mean, _, meas = dual_tube_magnitudes(patch, lam)
        assert mean >= 0.5 * meas
        assert mean <= meas * 1.02

    def test_decay_off_tube(self):
        lam = 1024.0
        y0, cyl = central_cylinder(P3, lam)
        g = CylinderField(cyl, lam, y0)
        on = abs(adjoint_apply(P3, g, lam, y0))
        y = y0.copy()
        y[0] += 10 * lam ** -0.5
        # the bump alone would keep about half the magnitude
        assert smooth_bump(y, y0, 0.5) > 0.5
        assert abs(adjoint_apply(P3, g, lam, y)) < 0.25 * on

    def test_resolution_limit(self):
        y0, cyl = central_cylinder(P3, 256.0)
        with pytest.raises(ResolutionError):
            adjoint_apply(P3, CylinderField(cyl), 2 * LAMBDA_MAX, y0)
        with pytest.raises(ResolutionError):
            adjoint_apply(P3, CylinderField(cyl), 256.0, y0, max_nodes=10)

    def test_negative_frequency(self):
        y0, cyl = central_cylinder(P3, 256.0)
        with pytest.raises(DomainError):
            adjoint_apply(P3, CylinderField(cyl), -1.0, y0)

    def test_vectorised_points(self):
        y0, cyl = central_cylinder(P3, 64.0)
        g = CylinderField(cyl, 64.0, y0)
        ys = np.stack([y0, y0 + [0.01, 0, 0]])
        many = adjoint_apply(P3, g, 64.0, ys)
        assert many.shape == (2,)
        assert many[1] == pytest.approx(adjoint_apply(P3, g, 64.0, ys[1]))

    def test_bump(self):
        c = np.zeros(3)
        assert smooth_bump(c, c, 0.5) == 1.0
        assert smooth_bump(np.array([0.5, 0, 0]), c, 0.5) == 0.0


def brute_farthest(pts, spacing, start):
    chosen = [start]
    mind = np.linalg.norm(pts - pts[start], axis=1)
    while mind.max() >= spacing:
        j = int(np.argmax(mind))
        chosen.append(j)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[j], axis=1))
    return pts[chosen]


class TestFamily:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.6), st.integers(2, 3))
    def test_farthest_point_matches_brute_force(self, seed, spacing, dim):
        pts = np.random.default_rng(seed).uniform(-1, 1, (300, dim))
        fast = farthest_point_centers(pts, spacing)
        assert np.array_equal(fast, brute_farthest(pts, spacing, 0))

    @pytest.mark.parametrize("patch,lam", [(P3, 256.0), (P3, 1024.0), (P4, 256.0)])
    def test_count_near_expected(self, patch, lam):
        fam = build_family(patch, lam, 2.0, 0.5)
        assert fam.expected_count() / 4 <= len(fam) <= 4 * fam.expected_count()

    def test_separated(self):
        fam = build_family(P3, 256.0)
        d = np.linalg.norm(fam.centers[:, None] - fam.centers[None], axis=-1)
        assert d[np.triu_indices(len(fam), 1)].min() >= fam.separation - 1e-12

    def test_euclidean_rays_vertical(self):
        patch = MetricPatch.euclidean(3)
        P, v = focusing_ray(patch, np.array([0.1, -1.0, 0.2]))
        assert np.allclose(P, [0.1, 0.0, 0.2]) and np.allclose(v, [0, 1, 0])

    def test_bad_parameters(self):
        with pytest.raises(DomainError):
            build_family(P3, 0.0)


def empty_family(patch):
    z = np.empty((0, patch.n))
    return CylinderFamily(patch, 64.0, 0.5, focus_point(patch), 0.25, z, z, z)


class TestCounting:
    def test_single_cylinder(self):
        fam = build_family(P3, 256.0, 0.5, 1e-3)
        assert len(fam) == 1
        assert overlap_count(fam, 2000) == 1

    def test_empty(self):
        fam = empty_family(P3)
        assert overlap_count(fam) == 0
        assert square_function_norm(fam, 2.0) == 0.0

    @pytest.mark.parametrize("qp", [1.0, 2.5, 0.5])
    def test_square_function_domain(self, qp):
        with pytest.raises(DomainError):
            square_function_norm(build_family(P3, 64.0), qp)

    @pytest.mark.parametrize("qp", [2.0, 4 / 3])
    def test_square_function_single_cylinder(self, qp):
        fam = build_family(P3, 256.0, 0.5, 1e-3)
        meas = fam.cylinder(0).measure()
        assert square_function_norm(fam, qp, 400_000) == pytest.approx(meas ** (1 / qp), rel=0.05)

    def test_overlap_exponent(self):
        assert overlap_exponent(P3) == 0.5 and overlap_exponent(P4) == 0.5
        assert overlap_exponent(oscillatory_patch(5)) == 1.0

    def test_overlap_grows(self):
        fit = overlap_scaling(P3, [2.0 ** j for j in (6, 8, 10)], c=2.0, ball_radius=0.5, probes=5000)
        assert fit.slope > 0.2

    def test_dual_tube_small(self):
        fit = dual_tube_scaling(P3, [2.0 ** j for j in (6, 7, 8)], tolerance=0.15)
        assert fit.verdict

    @pytest.mark.parametrize("patch", [P3, P4], ids=["n3", "n4"])
    def test_counts_match_membership(self, patch):
        fam = build_family(patch, 128.0, 2.0, 0.5)
        rng = np.random.default_rng(1)
        pts = np.concatenate([fam.sample_cylinders(rng, 300), fam.sample_slab(rng, 300)])
        ref = sum(fam.cylinder(i).contains(pts).astype(int) for i in range(len(fam)))
        assert np.array_equal(fam.counts(pts, chunk=97), ref)
