"""Experiment configuration with a lossless JSON round trip."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from ..errors import DomainError

EXPERIMENTS = ("verify-geodesics", "curvature", "nikodym-scaling", "bush", "dimension",
               "oscillatory", "thresholds", "all")
PROFILES = ("exp_flat", "monomial")
FAMILIES = ("auto", "three_d", "odd_focus", "even_focus", "euclidean")


@dataclass(frozen=True)
class ExperimentConfig:
    """One run.  Schedules are exponent ranges: delta = 2^-j, lambda = 2^j.

    ``p = None`` uses the exponent of the counterexample preset.
    """

    experiment: str = "thresholds"
    n: int = 3
    family: str = "auto"
    profile: str = "exp_flat"
    k: int = 1
    p: Optional[float] = None
    q: float = 3.0
    delta_range: tuple = (3, 7)
    lambda_range: tuple = (6, 12)
    seed: int = 0
    samples: int = 20_000
    out_dir: str = "results"
    variant: Optional[str] = None
    tolerance: Optional[float] = None
    svg: bool = True

    def __post_init__(self):
        object.__setattr__(self, "delta_range", tuple(int(v) for v in self.delta_range))
        object.__setattr__(self, "lambda_range", tuple(int(v) for v in self.lambda_range))
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}")
        if self.profile not in PROFILES:
            raise DomainError(f"unknown profile {self.profile!r}")
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.n < 2:
            raise DomainError("n must be at least 2")
        if self.k < 1:
            raise DomainError("k must be a positive integer")
        for name in ("delta_range", "lambda_range"):
            lo, hi = getattr(self, name)
            if len(getattr(self, name)) != 2 or lo >= hi:
                raise DomainError(f"{name} must be an increasing exponent pair")
        if self.delta_range[0] < 0:
            raise DomainError("delta exponents must be nonnegative")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must fit in 64 unsigned bits")
        if self.samples < 1:
            raise DomainError("samples must be positive")
        if self.p is not None and self.p <= 1:
            raise DomainError("p must exceed 1")
        if self.tolerance is not None and self.tolerance <= 0:
            raise DomainError("tolerance must be positive")

    @property
    def delta_schedule(self) -> tuple:
        """Strictly decreasing widths 2^-j."""
        lo, hi = self.delta_range
        return tuple(2.0 ** -j for j in range(lo, hi + 1))

    @property
    def lambda_schedule(self) -> tuple:
        """Strictly increasing frequencies 2^j."""
        lo, hi = self.lambda_range
        return tuple(2.0 ** j for j in range(lo, hi + 1))

    def resolved_family(self) -> str:
        if self.family != "auto":
            return self.family
        if self.n == 3:
            return "three_d"
        return "odd_focus" if self.n % 2 else "even_focus"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_range"] = list(self.delta_range)
        d["lambda_range"] = list(self.lambda_range)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def updated(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
