"""Descriptive statistics used by the replication summaries and report tables.

Percentiles interpolate linearly between the closest order statistics
(position ``(n - 1) * q``). Standard deviations are sample (``n - 1``)
deviations. Skewness is the adjusted Fisher-Pearson coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Percentile sets of the cohort tables and of the simulated-balance tables.
COHORT_PERCENTILES = (25, 50, 75, 90, 95, 96, 97, 98, 99, 99.5, 99.9)
BALANCE_PERCENTILES = (5, 10, 15, 25, 40, 50, 75, 85, 95, 98)


def pct_label(q: float) -> str:
    """``99.5 -> 'p995'``, ``25 -> 'p25'``."""
    return "p" + (f"{q:g}".replace(".", ""))


def percentile(sorted_values: np.ndarray, q: float) -> float:
    n = sorted_values.size
    pos = (n - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    a, b = float(sorted_values[lo]), float(sorted_values[hi])
    return a + (b - a) * frac if frac else a


def sample_sd(values: np.ndarray) -> float | None:
    n = values.size
    if n < 2:
        return None
    if values.min() == values.max():
        return 0.0
    return float(np.std(values.astype(np.float64), ddof=1))


def exact_mean(values: np.ndarray) -> float:
    if values.dtype.kind in "iu":
        return int(values.sum(dtype=np.int64)) / values.size
    if values.min() == values.max():
        return float(values[0])
    return math.fsum(values.tolist()) / values.size


@dataclass(frozen=True)
class StatsSummary:
    """Summary of a sample; location statistics optionally over positives only.

    ``n`` and ``pct_zero`` always describe the full sample. When
    ``positive_only`` is set, percentiles, max, mean and sd describe the
    strictly positive subset; when every value is zero they are all 0.
    """

    n: int
    n_zero: int
    pct_zero: float
    percentiles: dict[str, float | None] = field(default_factory=dict)
    max: float | None = None
    mean: float | None = None
    sd: float | None = None
    positive_only: bool = True

    @property
    def pct_no_expense(self) -> float:
        return self.pct_zero

    def cells(self) -> dict[str, float | None]:
        """Flat ``name -> value`` view in table row order."""
        out: dict[str, float | None] = {"n": self.n, "n0": self.n_zero, "pct_zero": self.pct_zero}
        out.update(self.percentiles)
        out.update({"max": self.max, "mean": self.mean, "sd": self.sd})
        return out


def descriptive_stats(values, positive_only: bool = True, percentiles=COHORT_PERCENTILES) -> StatsSummary:
    arr = np.asarray(values)
    if arr.size == 0:
        raise ValueError("no values to summarise")
    arr = arr.ravel()
    n = int(arr.size)
    n_zero = int(np.count_nonzero(arr == 0))
    subset = arr[arr > 0] if positive_only else arr
    labels = [pct_label(q) for q in percentiles]
    if subset.size == 0:
        zeros = dict.fromkeys(labels, 0.0)
        return StatsSummary(n, n_zero, 100.0 * n_zero / n, zeros, 0.0, 0.0, 0.0, positive_only)
    s = np.sort(subset)
    return StatsSummary(
        n=n,
        n_zero=n_zero,
        pct_zero=100.0 * n_zero / n,
        percentiles={lab: percentile(s, q) for lab, q in zip(labels, percentiles)},
        max=float(s[-1]),
        mean=exact_mean(s),
        sd=sample_sd(s),
        positive_only=positive_only,
    )


def skewness(values) -> float | None:
    """Adjusted Fisher-Pearson sample skewness; ``None`` below 3 values or for constant data."""
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n < 3 or x.min() == x.max():
        return None
    d = x - x.mean()
    m2 = np.mean(d * d)
    m3 = np.mean(d * d * d)
    g1 = m3 / m2**1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


@dataclass(frozen=True)
class TukeyFences:
    q1: float
    q3: float
    lower: float
    upper: float
    outliers: np.ndarray

    @property
    def n_outliers(self) -> int:
        return int(self.outliers.size)


def tukey_outliers(values, k: float = 1.5) -> TukeyFences:
    s = np.sort(np.asarray(values).ravel())
    if s.size == 0:
        raise ValueError("no values")
    q1, q3 = percentile(s, 25), percentile(s, 75)
    iqr = q3 - q1
    lower, upper = q1 - k * iqr, q3 + k * iqr
    return TukeyFences(q1, q3, lower, upper, s[(s < lower) | (s > upper)])


def mean_sd(values) -> tuple[float | None, float | None, int]:
    """Cross-replication ``(mean, sd, n)`` ignoring undefined (``None``) entries."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None, 0
    if vals.min() == vals.max():
        return float(vals[0]), (0.0 if vals.size > 1 else None), int(vals.size)
    return math.fsum(vals.tolist()) / vals.size, float(np.std(vals, ddof=1)), int(vals.size)
