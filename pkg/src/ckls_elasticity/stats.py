"""Small statistical helpers for the Monte Carlo harness."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import DegenerateDesign, TooFewSamples

_STD_NORMAL = NormalDist()


def normal_cdf(x: float) -> float:
    """Standard normal CDF through ``erfc``, accurate to double precision."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class SampleSummary:
    count: int
    mean: float
    variance: float
    min: float
    max: float
    quantiles: dict

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def stderr(self) -> float:
        """Standard error of the mean."""
        return math.sqrt(self.variance / self.count)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["quantiles"] = {str(k): v for k, v in self.quantiles.items()}
        return out


QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


def summarize(samples: Sequence[float]) -> SampleSummary:
    """Mean, unbiased variance, range and a few linear-interpolated quantiles.

    Raises
    ------
    TooFewSamples
        With fewer than two samples.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    n = x.size
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1)
    qs = {lvl: float(np.quantile(x, lvl)) for lvl in QUANTILE_LEVELS}
    return SampleSummary(n, mean, var, float(x[0]), float(x[-1]), qs)


def kolmogorov_sf(t: float, terms: int = 100) -> float:
    """Asymptotic Kolmogorov tail ``P(sqrt(n) D > t)``."""
    if t <= 0.0:
        return 1.0
    if t < 0.2:
        # the alternating series converges slowly here; the tail is 1 to double precision
        return 1.0
    s = 0.0
    for j in range(1, terms + 1):
        s += (-1) ** (j - 1) * math.exp(-2.0 * j * j * t * t)
    return min(1.0, max(0.0, 2.0 * s))


def ks_statistic_normal(samples: Sequence[float]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic against the standard normal.

    Returns
    -------
    D : float
        ``sup |F_n - Phi|``.
    p : float
        Asymptotic p-value from the Kolmogorov distribution at ``sqrt(n) D``.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise TooFewSamples("need at least one sample")
    cdf = np.array([normal_cdf(v) for v in x])
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Ordinary least squares line through ``(xs, ys)``.

    Returns ``(slope, intercept, r_squared)``; ``r_squared`` is 1 for an exact
    fit.

    Raises
    ------
    TooFewSamples, DegenerateDesign
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d and of equal length")
    if x.size < 2:
        raise TooFewSamples("a line needs at least two points")
    xm = math.fsum(x) / x.size
    ym = math.fsum(y) / y.size
    sxx = math.fsum((x - xm) ** 2)
    if sxx == 0.0:
        raise DegenerateDesign("all x values are equal")
    sxy = math.fsum((x - xm) * (y - ym))
    slope = sxy / sxx
    intercept = ym - slope * xm
    syy = math.fsum((y - ym) ** 2)
    if syy == 0.0:
        return slope, intercept, 1.0
    ss_res = math.fsum((y - intercept - slope * x) ** 2)
    return slope, intercept, max(0.0, 1.0 - ss_res / syy)
