"""Per-dose-bin Weibull fitting and 95% band construction.

At each dose the cohort's percent volumes are fitted to a two-parameter
Weibull distribution by least squares on the double-log transform of the
CDF: ln(-ln(1 - F(x))) is linear in ln(x) with slope k and intercept
-k*ln(s).  The band joins the fitted lower/upper tail quantiles across the
dose axis.  Zero volumes cannot enter the log transform and are excluded per
bin; bins without a usable fit fall back to the empirical min/max.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import CumulativeDVH, DoseGrid
from .errors import DegenerateFit, EmptyCohort, InsufficientPositive, ZeroVariance


class FitStatus(str, Enum):
    FITTED = "fitted"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class WeibullParams:
    k: float  # dimensionless shape
    s: float  # scale, same units as the data

    def __post_init__(self):
        if self.k <= 0 or self.s <= 0:
            raise DegenerateFit(f"invalid Weibull parameters k={self.k}, s={self.s}")


def moments(sample: Sequence[float]):
    """(mean, stddev, skewness, kurtosis) with sample stddev (n-1) and
    population central-moment ratios for the shape terms; kurtosis is
    non-excess, so a Gaussian gives 3."""
    x = np.asarray(sample, dtype=float)
    if x.size < 4:
        raise ValueError("need at least 4 values")
    mean = float(x.mean())
    centered = x - mean
    m2 = float((centered**2).mean())
    if m2 <= 0.0:
        raise ZeroVariance("sample has zero variance")
    std = float(x.std(ddof=1))
    skew = float((centered**3).mean() / m2**1.5)
    kurt = float((centered**4).mean() / m2**2)
    return mean, std, skew, kurt


def median_ranks(n: int) -> np.ndarray:
    """Bernard's approximation (i - 0.3)/(n + 0.4), i = 1..n."""
    i = np.arange(1, n + 1, dtype=float)
    return (i - 0.3) / (n + 0.4)


def mean_ranks(n: int) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    return i / (n + 1.0)


def weibull_fit_lsm(sample: Sequence[float], plotting_position=median_ranks) -> WeibullParams:
    """Least-squares Weibull fit: sort, take empirical CDF from the plotting
    positions, regress ln(-ln(1-F)) on ln(x); k is the slope, s = exp(-b/k).
    """
    x = np.asarray(sample, dtype=float)
    x = np.sort(x[x > 0.0])
    if x.size < 3:
        raise InsufficientPositive(f"need >= 3 positive values, got {x.size}")
    f = plotting_position(x.size)
    lx = np.log(x)
    ly = np.log(-np.log(1.0 - f))
    sxx = float(((lx - lx.mean()) ** 2).sum())
    if sxx == 0.0:
        raise DegenerateFit("all sample values identical")
    a = float(((lx - lx.mean()) * (ly - ly.mean())).sum()) / sxx
    b = float(ly.mean() - a * lx.mean())
    if a <= 0.0:
        raise DegenerateFit(f"non-positive slope {a}")
    return WeibullParams(k=float(a), s=float(np.exp(-b / a)))


def weibull_cdf(params: WeibullParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 1.0 - np.exp(-((x / params.s) ** params.k))


def weibull_quantile(params: WeibullParams, p: float) -> float:
    """Invert the CDF: x = s * (-ln(1-p))^(1/k)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return float(params.s * (-np.log1p(-p)) ** (1.0 / params.k))


@dataclass(frozen=True)
class ConfidenceBand:
    """Per-bin lower/upper percent bounds plus the fit status of each bin."""

    grid: DoseGrid
    lower: np.ndarray
    upper: np.ndarray
    fit_status: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (self.grid.n_bins,) or hi.shape != (self.grid.n_bins,):
            raise ValueError("bounds must have one value per grid bin")
        if len(self.fit_status) != self.grid.n_bins:
            raise ValueError("fit_status must have one entry per grid bin")
        if np.any(lo < 0) or np.any(hi > 100.0) or np.any(lo > hi):
            raise ValueError("band must satisfy 0 <= lower <= upper <= 100")
        lo = lo.copy()
        hi = hi.copy()
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "fit_status", tuple(self.fit_status))


def build_band(curves: Sequence[CumulativeDVH], confidence: float = 0.95) -> ConfidenceBand:
    """Fit a Weibull per dose bin to the cohort's positive percent volumes and
    join the tail quantiles.  Bins with fewer than 3 positive values or a
    degenerate fit fall back to the empirical min/max ([0, 0] when all zero).
    """
    if not curves:
        raise EmptyCohort("cannot build a band from an empty cohort")
    if len(curves) < 3:
        raise EmptyCohort("need at least 3 curves")
    grid = curves[0].grid
    for c in curves:
        if c.grid != grid:
            raise ValueError("curves must share a dose grid")
    values = np.stack([np.asarray(c.volume_pct) for c in curves])  # (n, bins)
    p_lo = (1.0 - confidence) / 2.0
    p_hi = 1.0 - p_lo
    lower = np.empty(grid.n_bins)
    upper = np.empty(grid.n_bins)
    status = []
    for b in range(grid.n_bins):
        col = values[:, b]
        try:
            params = weibull_fit_lsm(col)
            lower[b] = max(0.0, weibull_quantile(params, p_lo))
            upper[b] = min(100.0, weibull_quantile(params, p_hi))
            if lower[b] > upper[b]:  # extreme clamp collision
                lower[b] = upper[b]
            status.append(FitStatus.FITTED)
        except (InsufficientPositive, DegenerateFit):
            lower[b] = float(col.min())
            upper[b] = float(col.max())
            status.append(FitStatus.DEGENERATE)
    return ConfidenceBand(grid=grid, lower=lower, upper=upper, fit_status=tuple(status))


def band_coverage(band: ConfidenceBand, curves: Sequence[CumulativeDVH], fitted_only: bool = False) -> float:
    """Fraction of (curve, bin) pairs lying inside the band."""
    if not curves:
        raise EmptyCohort("no curves to check")
    mask = np.ones(band.grid.n_bins, dtype=bool)
    if fitted_only:
        mask = np.array([s is FitStatus.FITTED or s == FitStatus.FITTED for s in band.fit_status])
        if not mask.any():
            return 0.0
    inside = 0
    total = 0
    for c in curves:
        if c.grid != band.grid:
            raise ValueError("curve grid does not match band grid")
        v = np.asarray(c.volume_pct)[mask]
        inside += int(np.count_nonzero((v >= band.lower[mask]) & (v <= band.upper[mask])))
        total += int(mask.sum())
    return inside / total


BAND_COLUMNS = ("dose_cgy", "lower_pct", "upper_pct", "fit_status")


def band_to_csv(band: ConfidenceBand) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(BAND_COLUMNS)
    for dose, lo, hi, st in zip(band.grid.doses, band.lower, band.upper, band.fit_status):
        writer.writerow([repr(float(dose)), repr(float(lo)), repr(float(hi)), FitStatus(st).value])
    return out.getvalue()


def band_from_csv(text: str) -> ConfidenceBand:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != BAND_COLUMNS:
        raise ValueError(f"expected band columns {BAND_COLUMNS}, got {header}")
    doses, lower, upper, status = [], [], [], []
    for row in reader:
        if not row:
            continue
        doses.append(float(row[0]))
        lower.append(float(row[1]))
        upper.append(float(row[2]))
        status.append(FitStatus(row[3]))
    doses = np.asarray(doses)
    if len(doses) < 2:
        raise ValueError("band CSV needs at least two rows")
    step = doses[1] - doses[0]
    grid = DoseGrid(start_cgy=float(doses[0]), step_cgy=float(step), n_bins=len(doses))
    return ConfidenceBand(grid, np.asarray(lower), np.asarray(upper), tuple(status))
