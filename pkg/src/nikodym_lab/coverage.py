"""Call counter for the public operations, so a full run can prove it touched each one."""
from __future__ import annotations

import functools
from collections import Counter

OPERATIONS = (
    "metric_core.cometric",
    "metric_core.metric",
    "metric_core.hamiltonian",
    "metric_core.volume_density",
    "metric_core.curvature_component",
    "geodesic_flow.flow",
    "geodesic_flow.closed_form_fan",
    "geodesic_flow.fan_jacobian",
    "geodesic_distance.dist",
    "geodesic_distance.dist_gradient",
    "nikodym_maximal.tube_average",
    "nikodym_maximal.maximal_at",
    "nikodym_maximal.counterexample_ratio",
    "nikodym_maximal.slope_fit",
    "tube_combinatorics.cosphere_theta",
    "tube_combinatorics.spread_check",
    "tube_combinatorics.bush_experiment",
    "tube_combinatorics.dimension_experiment",
    "oscillatory_lab.adjoint_apply",
    "oscillatory_lab.dual_tube_scaling",
    "oscillatory_lab.overlap_count",
    "oscillatory_lab.square_function_norm",
    "oscillatory_lab.exponent_threshold",
    "oscillatory_lab.chain_inequality_check",
)

_calls: Counter = Counter()


def counted(name: str):
    if name not in OPERATIONS:
        raise ValueError(f"unknown operation {name}")

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            _calls[name] += 1
            return fn(*args, **kwargs)
        return inner
    return wrap


def snapshot() -> dict:
    return {op: _calls[op] for op in OPERATIONS}


def reset() -> None:
    _calls.clear()


def missing(counts: dict) -> list:
    return [op for op in OPERATIONS if not counts.get(op)]
