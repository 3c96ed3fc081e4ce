"""Log-log slope fits, the common verdict object of every experiment."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .coverage import counted
from .errors import DomainError


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of log(value) against log(parameter)."""

    points: tuple
    slope: float
    intercept: float
    residual_rms: float
    halfwidth: float
    expected_slope: Optional[float] = None
    tolerance: Optional[float] = None
    label: str = ""

    @property
    def verdict(self) -> Optional[bool]:
        if self.expected_slope is None or self.tolerance is None:
            return None
        return bool(abs(self.slope - self.expected_slope) <= self.tolerance)

    def expect(self, expected_slope: float, tolerance: float, label: str = "") -> "ScalingFit":
        if tolerance <= 0:
            raise DomainError("tolerance must be positive")
        return replace(self, expected_slope=float(expected_slope), tolerance=float(tolerance),
                       label=label or self.label)

    def refit(self) -> "ScalingFit":
        """Recompute from the stored points alone."""
        return slope_fit(self.points, self.expected_slope, self.tolerance, self.label)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "points": [[float(a), float(b)] for a, b in self.points],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_rms": self.residual_rms,
            "halfwidth": self.halfwidth,
            "expected_slope": self.expected_slope,
            "tolerance": self.tolerance,
            "verdict": None if self.verdict is None else ("pass" if self.verdict else "fail"),
        }


@counted("nikodym_maximal.slope_fit")
def slope_fit(points: Sequence, expected_slope: Optional[float] = None,
              tolerance: Optional[float] = None, label: str = "") -> ScalingFit:
    """Fit log(value) = slope * log(parameter) + intercept.

    ``halfwidth`` is the 95% Student-t confidence half-width of the slope.
    """
    pts = np.asarray([(float(a), float(b)) for a, b in points])
    if len(pts) < 3:
        raise DomainError("need at least three points for a slope fit")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DomainError("parameters and values must be positive and finite")
    if len(np.unique(pts[:, 0])) != len(pts):
        raise DomainError("parameters must be distinct")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = len(pts) - 2
    rms = float(np.sqrt(np.mean(resid ** 2)))
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    se = float(np.sqrt(np.sum(resid ** 2) / dof / sxx)) if dof > 0 else 0.0
    half = float(stats.t.ppf(0.975, dof) * se) if dof > 0 else float("inf")
    fit = ScalingFit(tuple((float(a), float(b)) for a, b in pts), float(coef[0]),
                     float(coef[1]), rms, half, label=label)
    if expected_slope is not None and tolerance is not None:
        fit = fit.expect(expected_slope, tolerance, label)
    return fit
