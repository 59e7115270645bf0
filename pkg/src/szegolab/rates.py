"""Convergence rows and log-log rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    value: complex
    target: complex
    abs_error: float
    bound: Optional[float] = None
    runtime_ms: float = 0.0

    @classmethod
    def make(cls, n, value, target, bound=None, runtime_ms=0.0) -> "ConvergenceRow":
        value, target = complex(value), complex(target)
        return cls(int(n), value, target, abs(value - target), bound, runtime_ms)


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r2: float

    @property
    def available(self) -> bool:
        return not math.isnan(self.slope)


FIT_UNAVAILABLE = RateFit(math.nan, math.nan, math.nan)


def fit_log_log(ns: Sequence[float], log_values: Sequence[float]) -> RateFit:
    """Least squares of ``log_values`` against log n; needs at least 3 points."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.asarray(log_values, dtype=float)
    keep = np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < 3:
        return FIT_UNAVAILABLE
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


def fit_rate(rows: Sequence[ConvergenceRow], noise_floor: float = 0.0) -> RateFit:
    """Fit log abs_error = slope * log n + intercept over rows above the noise floor.

    Fewer than three usable rows gives :data:`FIT_UNAVAILABLE` (all NaN).
    """
    usable = [r for r in rows if r.abs_error > noise_floor and r.abs_error > 0]
    if len(usable) < 3:
        return FIT_UNAVAILABLE
    return fit_log_log([r.n for r in usable], [math.log(r.abs_error) for r in usable])
