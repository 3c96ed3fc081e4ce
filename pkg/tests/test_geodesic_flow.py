import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nikodym_lab.errors import DomainError, InstabilityError, TruncationError
from nikodym_lab.geodesic_flow import (FanParams, PhasePoint, closed_form_fan, fan_covector,
                                       fan_inverse, fan_jacobian, flow)
from nikodym_lab.metric_core import AlphaProfile, MetricPatch
from nikodym_lab.studies import geodesic_check, jacobian_check, make_patch, random_fan


def mono3(k=1, s_max=None):
    return MetricPatch.three_d(AlphaProfile.monomial(k, s_max))


def test_euclidean_straight_line():
    p = MetricPatch.euclidean(3)
    xi = np.array([0.6, 0.0, 0.8])
    path = flow(p, PhasePoint([0.1, 0.2, -0.3], xi), (-0.5, 0.5))
    assert np.allclose(path.x, np.array([0.1, 0.2, -0.3]) + path.t[:, None] * xi, atol=1e-13)
    assert np.all(path.xi == xi)


class TestFlow:
    @pytest.mark.parametrize("theta", [0.0, 0.3, -0.7, 1.0])
    def test_matches_fan_from_origin(self, theta):
        p = mono3(1, s_max=0.99)
        start = PhasePoint([0, 0, 0], [np.sin(theta), np.cos(theta), 0])
        path = flow(p, start, (-0.6, 0.6))
        fan = FanParams("three_d", (0.0,), theta)
        assert np.max(np.abs(path.x - closed_form_fan(p, fan, path.t))) < 1e-6

    def test_covector_constant_on_fan(self):
        p = mono3(1)
        th = 0.4
        path = flow(p, PhasePoint([0, 0, 0], [np.sin(th), np.cos(th), 0]), (-0.5, 0.5))
        assert np.max(np.abs(path.xi - [np.sin(th), np.cos(th), 0])) < 1e-12

    def test_uniform_samples(self):
        path = flow(mono3(1), PhasePoint([0, 0, 0], [0, 1, 0]), (-0.3, 0.5), step=1e-3)
        assert np.allclose(np.diff(path.t), 1e-3)
        assert path.step == pytest.approx(1e-3)

    def test_conservation_generic_start(self):
        p = mono3(2)
        start = PhasePoint.unit(p, [0.1, -0.2, 0.05], [0.3, 0.8, -0.5])
        path = flow(p, start, (-0.4, 0.4))
        assert path.drift(p) < 1e-8

    def test_time_reversal(self):
        p = mono3(1)
        start = PhasePoint.unit(p, [0.0, 0.1, 0.0], [0.4, 0.7, 0.6])
        fwd = flow(p, start, (0.0, 0.5))
        back = flow(p, PhasePoint(fwd.x[-1], -fwd.xi[-1]), (0.0, 0.5))
        assert np.max(np.abs(back.x[-1] - start.x)) < 1e-8
        assert np.max(np.abs(-back.xi[-1] - start.xi)) < 1e-8

    def test_arclength(self):
        p = MetricPatch.odd_focus(5, AlphaProfile.monomial(1))
        start = PhasePoint.unit(p, np.zeros(5), [0.2, -0.1, 1.0, 0.3, 0.1])
        path = flow(p, start, (-0.4, 0.3))
        assert path.metric_length(p) == pytest.approx(0.7, abs=1e-6)

    def test_flat_region_straight(self):
        p = MetricPatch.three_d(AlphaProfile.exp_flat())
        start = PhasePoint.unit(p, [0.0, 0.1, 0.0], [0.3, 0.9, 0.2])
        path = flow(p, start, (0.0, 0.7))
        v = path.x[1] - path.x[0]
        affine = path.x[0] + np.outer(np.arange(len(path.t)), v)
        assert np.max(np.abs(path.x - affine)) < 1e-10

    def test_leaves_box(self):
        p = mono3(1)
        with pytest.raises(TruncationError) as info:
            flow(p, PhasePoint([0, 0, 0], [0, 1, 0]), (0, 2.0))
        partial = info.value.partial
        assert partial.t[0] == 0 and partial.x[-1][1] <= 0.75 + 1e-12

    def test_drift_alarm(self):
        p = mono3(1)
        start = PhasePoint.unit(p, [0.0, 0.1, 0.0], [0.4, 0.7, 0.6])
        with pytest.raises(InstabilityError):
            flow(p, start, (0.0, 0.5), step=0.1, drift_limit=1e-14)


class TestClosedFormFan:
    def test_vertical(self):
        p = mono3(2)
        t = np.linspace(-0.5, 0.5, 5)
        x = closed_form_fan(p, FanParams("three_d", (0.2,), 0.0), t)
        assert np.allclose(x, np.stack([np.full(5, 0.2), t, np.zeros(5)], 1), atol=1e-15)

    def test_monomial_quarter(self):
        p = mono3(1, s_max=0.99)
        x = closed_form_fan(p, FanParams("three_d", (0.0,), np.pi / 4), 1.0)
        assert x[2] == pytest.approx(0.25, abs=1e-12)

    def test_exp_flat_planar(self):
        p = make_patch("three_d", 3, "exp_flat")
        fan = FanParams("three_d", (0.1,), 0.5)
        x = closed_form_fan(p, fan, np.linspace(0, 1, 11))
        assert np.all(x[:, 2] == 0)

    def test_odd_focus_layout(self):
        p = MetricPatch.odd_focus(5, AlphaProfile.monomial(1))
        th = np.array([0.3, -0.2])
        w = np.sqrt(1 - th @ th)
        t = 0.5
        x = closed_form_fan(p, FanParams("odd_focus", (0.1, -0.1), th), t)
        free = np.array([0.1, -0.1]) + t * th
        assert x[2] == pytest.approx(t * w)
        # free coordinates sit below the coupling coordinate, partners mirror them above it
        assert sorted(np.round(x[[0, 1]], 12)) == sorted(np.round(free, 12))
        assert sorted(np.round(x[[3, 4]], 12)) == sorted(np.round(th * (t * w) ** 2 / 2 / w, 12))

    def test_inverse_round_trip(self):
        p = make_patch("odd_focus", 5, "exp_flat")
        fan = FanParams("odd_focus", (0.1, 0.0), (0.2, -0.1))
        x = closed_form_fan(p, fan, -0.6)
        back, t = fan_inverse(p, x)
        assert t == pytest.approx(-0.6)
        assert np.allclose(back.vector, fan.vector, atol=1e-10)

    def test_theta_bounds(self):
        with pytest.raises(DomainError):
            FanParams("three_d", (0.0,), np.pi / 2)
        with pytest.raises(DomainError):
            FanParams("odd_focus", (0.0, 0.0), (0.6, 0.6))
        with pytest.raises(DomainError):
            FanParams("even_focus", (0.0, 0.0), (0.5, 0.0))


class TestFanJacobian:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_three_d_monomial(self, k):
        p = mono3(k, s_max=0.99)
        for t in (-0.6, 0.4):
            J = fan_jacobian(p, FanParams("three_d", (0.0,), 0.0), t)
            assert J == pytest.approx(abs(t ** (k + 1) / (k + 1)), rel=1e-5)

    def test_exp_flat_degenerate(self):
        p = make_patch("three_d", 3, "exp_flat")
        assert fan_jacobian(p, FanParams("three_d", (0.0,), 0.0), 0.5) == pytest.approx(0, abs=1e-12)

    def test_odd_focus_five(self):
        p = MetricPatch.odd_focus(5, AlphaProfile.monomial(1, 0.99))
        J = fan_jacobian(p, FanParams("odd_focus", (0.0, 0.0), (0.0, 0.0)), -0.5)
        assert J == pytest.approx((0.25 / 2) ** 2, rel=1e-5)

    @pytest.mark.parametrize("n,k", [(3, 1), (3, 3), (5, 2)])
    def test_study_helper(self, n, k):
        assert jacobian_check(n, k) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([("three_d", 3), ("odd_focus", 5), ("even_focus", 4)]),
       st.sampled_from(["exp_flat", "monomial"]))
def test_random_fans_agree_with_flow(seed, fam, profile):
    family, n = fam
    p = make_patch(family, n, profile, 1, s_max=0.99 if profile == "monomial" else None)
    fan = random_fan(p, np.random.default_rng(seed))
    start = PhasePoint(closed_form_fan(p, fan, 0.0), fan_covector(p, fan))
    assert start.is_unit(p)
    path = flow(p, start, (-1.0, 1.0))
    assert np.max(np.abs(path.x - closed_form_fan(p, fan, path.t))) < 1e-6
    assert path.drift(p) < 1e-8


def test_geodesic_check_small():
    chk = geodesic_check(make_patch("even_focus", 4, "exp_flat"), draws=3, seed=5)
    assert chk.max_deviation < 1e-6 and chk.max_drift < 1e-8
