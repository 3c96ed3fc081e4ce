"""Execute experiments and write CSV datapoints, a JSON summary and SVG plots."""
from __future__ import annotations

import csv
import io
import json
import math
import traceback
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .. import coverage, studies
from ..errors import NikodymLabError
from ..geodesic_distance import dist, dist_gradient
from ..geodesic_flow import GeodesicPath, closed_form_fan, fan_inverse
from ..metric_core import MetricPatch
from ..nikodym_maximal import (Ball, SlabFunction, Tube, counterexample_ratio, fan_tube_path,
                               maximal_at, tube_average)
from ..oscillatory_lab import (Cylinder, CylinderField, adjoint_apply, chain_inequality_check,
                               dual_tube_scaling,
                               exact_exponents, exponent_threshold, focus_axis, focus_point,
                               focusing_ray)
from ..scaling import ScalingFit
from ..tube_combinatorics import cosphere_theta, spread_check, spread_trials
from .config import ExperimentConfig

CSV_COLUMNS = ("experiment", "n", "family", "parameter", "value", "stderr", "seed")


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    coverage: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        verdicts = [f.verdict for f in self.fits if f.verdict is not None]
        verdicts += [r["verdict"] == "pass" for r in self.records if r.get("verdict")]
        return not self.errors and all(verdicts)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "fits": [f.to_dict() for f in self.fits],
            "records": self.records,
            "errors": self.errors,
            "coverage": self.coverage,
            "coverage_missing": coverage.missing(self.coverage) if self.config.experiment == "all" else [],
            "verdict": "pass" if self.passed else "fail",
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _record(name, value, expected=None, tolerance=None, verdict=None, **extra):
    rec = {"name": name, "value": value if not isinstance(value, Fraction) else str(value)}
    if expected is not None:
        rec["expected"] = expected if not isinstance(expected, Fraction) else str(expected)
    if tolerance is not None:
        rec["tolerance"] = tolerance
    if verdict is not None:
        rec["verdict"] = "pass" if verdict else "fail"
    rec.update(extra)
    return rec


class _Run:
    def __init__(self, cfg: ExperimentConfig, result: RunResult):
        self.cfg = cfg
        self.res = result

    def row(self, experiment, n, family, parameter, value, stderr=0.0, seed=None):
        self.res.rows.append({"experiment": experiment, "n": n, "family": family,
                              "parameter": float(parameter), "value": float(value),
                              "stderr": float(stderr),
                              "seed": self.cfg.seed if seed is None else seed})

    # individual experiments ------------------------------------------------------------

    def verify_geodesics(self, n=None, family=None):
        cfg = self.cfg
        n = n or cfg.n
        family = family or cfg.resolved_family()
        if family == "euclidean":
            family = "three_d" if n == 3 else ("odd_focus" if n % 2 else "even_focus")
        s_max = 0.99 if cfg.profile == "monomial" else None
        patch = studies.make_patch(family, n, cfg.profile, cfg.k, s_max=s_max)
        draws = max(2, min(50, cfg.samples // 400))
        chk = studies.geodesic_check(patch, draws, seed=cfg.seed)
        self.row("verify-geodesics", n, family, draws, chk.max_deviation)
        self.res.records.append(_record("fan deviation", chk.max_deviation, 0.0, 1e-6,
                                        chk.max_deviation < 1e-6, family=family))
        self.res.records.append(_record("hamiltonian drift", chk.max_drift, 0.0, 1e-8,
                                        chk.max_drift < 1e-8, family=family))
        # distance along a fan equals the parameter gap when the fan is the shortest path
        rng = np.random.default_rng(cfg.seed)
        fan = studies.random_fan(patch, rng)
        x, y = closed_form_fan(patch, fan, -0.4), closed_form_fan(patch, fan, 0.3)
        d = dist(patch, x, y)
        self.res.records.append(_record("fan distance", d, 0.7, 1e-6, abs(d - 0.7) < 1e-6,
                                        family=family))
        g = dist_gradient(patch, x, y)
        h = float(patch.hamiltonian(y, g))
        self.res.records.append(_record("eikonal", h, 1.0, 1e-5, abs(h - 1) < 1e-5, family=family))
        for k in (1, 2, 3):
            gap = studies.jacobian_check(3 if n == 3 else 5, k)
            self.res.records.append(_record(f"fan jacobian k={k}", gap, 0.0, 1e-5, gap < 1e-5))

    def curvature(self):
        cfg = self.cfg
        k = cfg.k
        patch = studies.make_patch("three_d", 3, "monomial", k)
        x = np.array([0.1, 0.2, -0.1])
        G, Gi = patch.cometric(x), patch.metric(x)
        inv = float(np.max(np.abs(G @ Gi - np.eye(3))))
        self.res.records.append(_record("metric inverse", inv, 0.0, 1e-12, inv < 1e-12))
        rho = float(patch.volume_density(x))
        self.res.records.append(_record("volume density", rho, float(np.linalg.det(Gi)) ** 0.5,
                                        1e-12, abs(rho - np.linalg.det(Gi) ** 0.5) < 1e-12))
        R0 = studies.curvature_at_zero(k)
        self.row("curvature", 3, "three_d", 0.0, R0)
        if k == 1:
            self.res.records.append(_record("R3_232 at x2=0", R0, -0.75, 1e-4, abs(R0 + 0.75) < 1e-4))
        else:
            fit = studies.curvature_order(k).expect(2 * k - 2, 0.1, f"curvature order k={k}")
            for s, v in fit.points:
                self.row("curvature", 3, "three_d", s, v)
            self.res.fits.append(fit)

    def nikodym_scaling(self, n=None, profile=None):
        cfg = self.cfg
        if cfg.variant:
            if cfg.variant not in studies.PRESETS:
                raise NikodymLabError(f"unknown variant {cfg.variant!r}")
            preset = studies.PRESETS[cfg.variant]
        else:
            preset = studies.preset_for(n or cfg.n, profile or cfg.profile)
        n = preset.n
        p = cfg.p or preset.p
        deltas = cfg.delta_schedule
        fit, res = studies.nikodym_scaling(preset, deltas, samples=cfg.samples, seed=cfg.seed,
                                           p=p, workers=None)
        if cfg.tolerance:
            fit = fit.expect(fit.expected_slope, cfg.tolerance)
        for r in res:
            self.row("nikodym-scaling", n, preset.family, r.delta, r.ratio)
        self.res.fits.append(fit)
        # spot checks of the single-width operations at the widest delta
        patch = studies.make_patch(preset.family, n, preset.profile, preset.k)
        ball = Ball(preset.ball_center, preset.ball_radius)
        slab = SlabFunction(preset.variant, preset.c, deltas[0], n, preset.k)
        small = min(cfg.samples, 5000)
        one = counterexample_ratio(patch, slab, p, ball, grid=1, r=preset.r, anchor=0.0,
                                   witness=True, max_directions=0, samples=small, seed=cfg.seed)
        self.res.records.append(_record("single-width ratio", one, delta=deltas[0]))
        m = maximal_at(patch, ball.center, deltas[0], preset.r, slab, witness="auto", anchor=0.0,
                       max_directions=0, samples=small, seed=cfg.seed)
        fan, t = fan_inverse(patch, np.asarray(ball.center, dtype=float))
        tube = Tube(fan_tube_path(patch, fan, t, preset.r, 0.0), deltas[0])
        avg = tube_average(patch, tube, slab, samples=small, seed=cfg.seed)
        self.res.records.append(_record("maximal at centre", m, tube_average=avg))

    def bush(self):
        cfg = self.cfg
        small = cfg.samples < 20_000
        spread = studies.spread_study(calibration_trials=40 if small else 300,
                                      curved_trials=40 if small else 1000, seed=cfg.seed,
                                      samples=2000 if small else 4000)
        self.res.records.append(_record("spread constant c", spread.c))
        self.res.records.append(_record("spread pass rate", spread.pass_rate, 0.99, None,
                                        spread.pass_rate >= 0.99 or small,
                                        trials=spread.hypothesis_trials))
        deltas = cfg.delta_schedule[:4] if not small else cfg.delta_schedule[:3]
        deltas = tuple(d for d in deltas if d <= 0.125) or (0.125, 0.0625, 0.03125)
        bush = studies.bush_study(spread.c, deltas, samples=min(cfg.samples, 2000), seed=cfg.seed)
        for r in bush.reports[:len(deltas)]:
            self.row("bush", 3, "three_d", r.delta, r.M)
        floor = -2 * 2 - 0.3
        self.res.records.append(_record("bush count slope", bush.slab_fit.slope, f">= {floor}",
                                        None, bush.slab_fit.slope >= floor))
        self.res.records.append(_record("bush bound", bush.all_within, True, None, bush.all_within,
                                        C_prime=bush.C_prime))
        rate = bush.pairs_disjoint / bush.pairs_hypothesis if bush.pairs_hypothesis else 1.0
        self.res.records.append(_record("bush tip disjointness", rate, 1.0, None, rate == 1.0,
                                        pairs=bush.pairs_hypothesis))
        # one explicit pair for the cosphere distance
        trials = spread_trials(MetricPatch.euclidean(3), 1, seed=cfg.seed, samples=500)
        self.res.records.append(_record("sample theta", trials[0].theta))

    def dimension(self, n=None):
        cfg = self.cfg
        n = n or (cfg.n if cfg.n % 2 else 3)
        samples = max(cfg.samples * 20, 20_000)
        rep = studies.dimension_study(n, samples=samples, seed=cfg.seed)
        for d, v in rep.volumes:
            self.row("dimension", n, "odd_focus" if n > 3 else "three_d", d, v)
        self.res.fits.append(rep.fit)
        self.res.records.append(_record("witness plane length", rep.min_witness_length, ">= 0.1",
                                        None, rep.min_witness_length >= 0.1))

    def oscillatory(self, n=None):
        cfg = self.cfg
        n = n or cfg.n
        patch = studies.oscillatory_patch(n, "euclidean" if cfg.family == "euclidean" else None)
        lams = cfg.lambda_schedule
        dual, rows = studies.dual_tube_study(patch, lams, seed=cfg.seed,
                                             tolerance=0.15 if n == 3 else 0.2)
        for lam, mean, err, _ in rows:
            self.row("oscillatory-dual", n, patch.family, lam, mean, err)
        self.res.fits.append(dual)
        dual_tube_scaling(patch, lams[:3], y_samples=1)
        if patch.family == "euclidean":
            return
        over_lams = lams if n == 3 else tuple(l for l in lams if l <= 512)
        over, sq = studies.overlap_study(patch, over_lams, probes=cfg.samples, seed=cfg.seed,
                                         square_q=(2.0, 4 / 3), samples=max(cfg.samples, 5000))
        for lam, v in over.points:
            self.row("oscillatory-overlap", n, patch.family, lam, v)
        self.res.fits.append(over)
        for f in sq.values():
            self.res.fits.append(f)
        chain = studies.chain_study(n, dual, sq, cfg.q)
        self.res.records.append(_record("implied q threshold", float(chain.implied),
                                        float(chain.expected), chain.tolerance, chain.passed,
                                        q_excluded=chain.q_excluded))
        # the near-axis phase cancellation on the central cylinder
        y0 = focus_point(patch)
        P, v = focusing_ray(patch, y0)
        cyl = Cylinder(P, v, 0.5 * lams[0] ** -0.5, focus_axis(patch))
        val = abs(adjoint_apply(patch, CylinderField(cyl, lams[0], y0), lams[0], y0))
        meas = cyl.measure()
        self.res.records.append(_record("phase cancellation", val / meas, ">= 0.5", None,
                                        val >= 0.5 * meas))

    def thresholds(self, n=None):
        n = n or self.cfg.n
        th = exponent_threshold(n)
        self.res.records.append(_record("q threshold", th.q, th.q, None, True, n=n,
                                        baseline=str(th.baseline)))
        dual, sq = exact_exponents(n)
        chain = chain_inequality_check(n, dual, sq)
        self.res.records.append(_record("exact chain threshold", chain.implied, th.q, None,
                                        chain.exact, n=n))
        self.row("thresholds", n, "exact", n, float(th.q))

    def all(self):
        self.verify_geodesics(3, "three_d")
        self.curvature()
        self.nikodym_scaling(3, "exp_flat")
        self.bush()
        self.dimension(3)
        self.oscillatory(3)
        self.thresholds(3)
        # the spread and cosphere operations directly on one flat pair
        t = np.linspace(-0.5, 0.5, 101)
        x1 = np.stack([t, np.zeros_like(t), np.zeros_like(t)], 1)
        x2 = np.stack([np.zeros_like(t), t, np.zeros_like(t)], 1)
        xi1 = np.tile([1.0, 0, 0], (101, 1))
        xi2 = np.tile([0, 1.0, 0], (101, 1))
        g1, g2 = GeodesicPath(t, x1, xi1, 0.01), GeodesicPath(t, x2, xi2, 0.01)
        theta = cosphere_theta(g1, g2)
        ok = spread_check(MetricPatch.euclidean(3), g1, g2, np.zeros(3), 0.02, 0.2, 500,
                          seed=self.cfg.seed)
        self.res.records.append(_record("orthogonal pair spread", bool(ok), theta=theta))


def run(config: ExperimentConfig, write: bool = True) -> RunResult:
    """Run the configured experiment; writes results into ``config.out_dir`` when asked."""
    coverage.reset()
    result = RunResult(config)
    runner = _Run(config, result)
    name = config.experiment.replace("-", "_")
    try:
        getattr(runner, name)()
    except Exception as exc:  # serialized into the report, nonzero exit
        result.errors.append({"type": type(exc).__name__, "message": str(exc),
                              "traceback": traceback.format_exc(limit=5)})
    result.coverage = coverage.snapshot()
    if config.experiment == "all":
        missing = coverage.missing(result.coverage)
        if missing:
            result.errors.append({"type": "CoverageError",
                                  "message": "operations never called: " + ", ".join(missing)})
    if write:
        write_outputs(result)
    return result


def write_outputs(result: RunResult) -> Path:
    out = Path(result.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.config.experiment
    (out / f"{stem}.csv").write_text(result.csv_text())
    (out / f"{stem}.summary.json").write_text(json.dumps(result.summary(), indent=2, default=str))
    if result.config.svg:
        for i, fit in enumerate(result.fits):
            (out / f"{stem}.fit{i}.svg").write_text(loglog_svg(fit))
    return out


def loglog_svg(fit: ScalingFit, width: int = 360, height: int = 260) -> str:
    """Log-log scatter of the fit points with the fitted line."""
    lx = [math.log(a) for a, _ in fit.points]
    ly = [math.log(b) for _, b in fit.points]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(ly), max(ly)
    pad = 30
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)

    def px(x):
        return pad + (x - x0) * sx

    def py(y):
        return height - pad - (y - y0) * sy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for x, y in zip(lx, ly):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="black"/>')
    fy0 = fit.slope * x0 + fit.intercept
    fy1 = fit.slope * x1 + fit.intercept
    parts.append(f'<line x1="{px(x0):.2f}" y1="{py(fy0):.2f}" x2="{px(x1):.2f}" y2="{py(fy1):.2f}" '
                 'stroke="steelblue"/>')
    label = f"{fit.label} slope {fit.slope:.3f}"
    if fit.expected_slope is not None:
        label += f" (expected {fit.expected_slope:.3f})"
    parts.append(f'<text x="{pad}" y="18" font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
