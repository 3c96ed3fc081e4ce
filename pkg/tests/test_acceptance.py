"""Acceptance suite: one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import functools
import sys
from fractions import Fraction

import numpy as np
import pytest

from nikodym_lab import studies
from nikodym_lab.oscillatory_lab import chain_inequality_check, exact_exponents, exponent_threshold

DELTAS = tuple(2.0 ** -j for j in range(3, 8))
LAMBDAS = tuple(2.0 ** j for j in range(6, 13))
LAMBDAS_EVEN = tuple(2.0 ** j for j in range(6, 11))


def fit_line(fit):
    return f"slope {fit.slope:.4f}, expected {fit.expected_slope:.4f} +- {fit.tolerance}"


def geodesics():
    worst_dev, worst_drift = 0.0, 0.0
    for family, n in (("three_d", 3), ("odd_focus", 5), ("even_focus", 4)):
        for profile in ("exp_flat", "monomial"):
            patch = studies.make_patch(family, n, profile, 1,
                                       s_max=0.99 if profile == "monomial" else None)
            chk = studies.geodesic_check(patch, draws=50, seed=n)
            worst_dev = max(worst_dev, chk.max_deviation)
            worst_drift = max(worst_drift, chk.max_drift)
    ok = worst_dev < 1e-6 and worst_drift < 1e-8
    return ok, f"max deviation {worst_dev:.2e}, max drift {worst_drift:.2e}"


def jacobian():
    gaps = {(n, k): studies.jacobian_check(n, k) for n in (3, 5) for k in (1, 2, 3)}
    worst = max(gaps.values())
    return worst < 1e-5, f"worst relative gap {worst:.2e}"


def curvature():
    R0 = studies.curvature_at_zero(1)
    fits = [studies.curvature_order(k).expect(2 * k - 2, 0.1) for k in (2, 3)]
    ok = abs(R0 + 0.75) <= 1e-4 and all(f.verdict for f in fits)
    return ok, f"R(0) = {R0:.7f}; orders " + ", ".join(f"{f.slope:.4f}" for f in fits)


def counterexample(name):
    def check():
        fit, _ = studies.nikodym_scaling(studies.PRESETS[name], DELTAS)
        return bool(fit.verdict), fit_line(fit)
    check.__name__ = name
    return check


def dimension():
    out, ok = [], True
    for n in (3, 5):
        rep = studies.dimension_study(n)
        ok = ok and bool(rep.fit.verdict) and rep.min_witness_length >= 0.1
        out.append(f"n={n} {fit_line(rep.fit)}, witness length {rep.min_witness_length:.3f}")
    return ok, "; ".join(out)


def separation():
    spread = studies.spread_study(300, 1000)
    bush = studies.bush_study(spread.c)
    ok = spread.pass_rate >= 0.99 and bush.all_within
    return ok, (f"c = {spread.c:.4f}, pass rate {spread.pass_rate:.4f} over "
                f"{spread.hypothesis_trials} trials; C' = {bush.C_prime:.3g}, "
                f"bush bound held in {sum(r.within_bound for r in bush.reports)}/{len(bush.reports)}")


@functools.lru_cache(maxsize=None)
def dual(n):
    lams = LAMBDAS if n == 3 else LAMBDAS_EVEN
    return studies.dual_tube_study(studies.oscillatory_patch(n), lams,
                                   tolerance=0.15 if n == 3 else 0.2)[0]


@functools.lru_cache(maxsize=None)
def overlap(n):
    lams = LAMBDAS if n == 3 else LAMBDAS_EVEN
    return studies.overlap_study(studies.oscillatory_patch(n), lams, square_q=(2.0, 4 / 3))


def dual_tube():
    fit = dual(3)
    return bool(fit.verdict), fit_line(fit)


def overlap_count():
    fits = {n: overlap(n)[0] for n in (3, 4)}
    ok = all(f.verdict for f in fits.values())
    return ok, "; ".join(f"n={n} {fit_line(f)}" for n, f in fits.items())


def thresholds():
    ok, out = True, []
    for n, q in ((3, Fraction(10, 3)), (4, Fraction(14, 5))):
        th = exponent_threshold(n)
        d, sq = exact_exponents(n)
        symbolic = chain_inequality_check(n, d, sq)
        measured = studies.chain_study(n, dual(n), overlap(n)[1])
        ok = ok and th.q == q and symbolic.exact and measured.passed
        out.append(f"n={n} threshold {th.q}, symbolic {symbolic.implied}, "
                   f"measured {float(measured.implied):.4f}")
    return ok, "; ".join(out)


CRITERIA = [
    ("1 geodesic correctness", geodesics),
    ("2 fan jacobian", jacobian),
    ("3 curvature", curvature),
    ("4 exp-flat counterexample n=3 p=2.5", counterexample("flat_slab")),
    ("5 monomial counterexample k=2 p=3", counterexample("monomial_slab")),
    ("6 odd counterexample n=5 p=3", counterexample("odd_slab")),
    ("7 even counterexample n=4 p=3", counterexample("even_slab")),
    ("8 dimension", dimension),
    ("9 tube separation", separation),
    ("10 oscillatory dual tube", dual_tube),
    ("11 overlap count", overlap_count),
    ("12 thresholds", thresholds),
]


def report(label, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"


@pytest.mark.acceptance
@pytest.mark.parametrize("label,check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_criterion(label, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + report(label, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for label, check in CRITERIA:
        ok, detail = check()
        results.append(ok)
        print(report(label, ok, detail), flush=True)
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
