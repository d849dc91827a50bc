"""Error metrics, dose-band summaries, Kruskal-Wallis testing, model
selection and prediction ensembles.

The headline metric is per-patient MAE: the median over dose bins of the
absolute difference between actual and predicted percent volume, reported
over the full axis and three clinical dose bands, plus three point doses.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from .core import CumulativeDVH, FeatureVector, Organ, PatientRecord, value_at
from .errors import EmptyBand, EmptyCohort
from .regressors import AlgorithmId

POINT_DOSES_CGY = (5300.0, 5600.0, 6000.0)

#: dose list used for the actual-vs-predicted Kruskal-Wallis summaries
KW_DOSES_CGY = (3000.0, 4000.0, 4500.0, 5000.0, 5300.0, 5600.0, 5900.0, 6000.0)


class DoseBand(Enum):
    """Inclusive cGy ranges; LOW/INTERMEDIATE/HIGH tile FULL at bin level."""

    FULL = (0.0, 6420.0)
    LOW = (0.0, 1990.0)
    INTERMEDIATE = (2000.0, 3990.0)
    HIGH = (4000.0, 6420.0)

    @property
    def lo(self) -> float:
        return self.value[0]

    @property
    def hi(self) -> float:
        return self.value[1]

    @property
    def label(self) -> str:
        return f"{self.lo:.0f}-{self.hi:.0f}"

    def mask(self, grid) -> np.ndarray:
        doses = grid.doses
        return (doses >= self.lo) & (doses <= self.hi)


def median_abs_error(actual: CumulativeDVH, predicted: CumulativeDVH, band: DoseBand = DoseBand.FULL) -> float:
    """Median over the band's bins of |actual - predicted| percent volume."""
    if actual.grid != predicted.grid:
        raise ValueError("curves must share a dose grid")
    mask = band.mask(actual.grid)
    if not mask.any():
        raise EmptyBand(f"band {band.label} contains no grid bins")
    return float(np.median(np.abs(actual.volume_pct[mask] - predicted.volume_pct[mask])))


def point_error(actual: CumulativeDVH, predicted: CumulativeDVH, dose_cgy: float) -> float:
    return abs(value_at(actual, dose_cgy) - value_at(predicted, dose_cgy))


@dataclass(frozen=True)
class ErrorReport:
    """MAE summary for one (algorithm, organ, dataset split), mirroring the
    per-band / per-point-dose report layout."""

    algorithm: AlgorithmId
    organ: Organ
    dataset: str
    per_patient: dict  # case_id -> {band label: mae}
    band_avg: dict  # band label -> mean over patients
    point_avg: dict  # dose (float) -> mean over patients
    error_variance: float  # sample variance of per-patient FULL-band MAEs

    def to_row(self) -> dict:
        row = {"method": self.algorithm.value, "dataset": self.dataset}
        for band in (DoseBand.FULL, DoseBand.LOW, DoseBand.INTERMEDIATE, DoseBand.HIGH):
            row[band.label] = self.band_avg[band.label]
        for dose in POINT_DOSES_CGY:
            row[f"{dose:.0f}"] = self.point_avg[dose]
        return row

    def to_dict(self) -> dict:
        return {
            "method": self.algorithm.value,
            "organ": self.organ.value,
            "dataset": self.dataset,
            "band_avg": dict(self.band_avg),
            "point_avg": {f"{d:.0f}": v for d, v in self.point_avg.items()},
            "error_variance": self.error_variance,
            "per_patient": {k: dict(v) for k, v in self.per_patient.items()},
        }


REPORT_COLUMNS = ("method", "dataset", "0-6420", "0-1990", "2000-3990", "4000-6420", "5300", "5600", "6000")


def cohort_error_report(
    model,
    cohort: Sequence[PatientRecord],
    dataset: str,
    predictions: Sequence[CumulativeDVH] | None = None,
) -> ErrorReport:
    """Per-patient MAEs per band, then arithmetic means across patients; point
    errors averaged the same way.  Pass precomputed predictions to avoid
    re-predicting.
    """
    if not cohort:
        raise EmptyCohort("cannot evaluate an empty cohort")
    organ = model.organ
    if predictions is None:
        predictions = [model.predict_curve(rec.features) for rec in cohort]
    per_patient = {}
    full_maes = []
    band_sums = {b.label: 0.0 for b in DoseBand}
    point_sums = {d: 0.0 for d in POINT_DOSES_CGY}
    for rec, pred in zip(cohort, predictions):
        actual = rec.dvh[organ]
        entry = {}
        for band in DoseBand:
            mae = median_abs_error(actual, pred, band)
            entry[band.label] = mae
            band_sums[band.label] += mae
        for dose in POINT_DOSES_CGY:
            entry[f"pt{dose:.0f}"] = point_error(actual, pred, dose)
            point_sums[dose] += entry[f"pt{dose:.0f}"]
        per_patient[rec.case_id] = entry
        full_maes.append(entry[DoseBand.FULL.label])
    n = len(cohort)
    variance = float(np.var(full_maes, ddof=1)) if n > 1 else 0.0
    return ErrorReport(
        algorithm=model.algorithm,
        organ=organ,
        dataset=dataset,
        per_patient=per_patient,
        band_avg={label: s / n for label, s in band_sums.items()},
        point_avg={d: s / n for d, s in point_sums.items()},
        error_variance=variance,
    )


def _midranks(pooled: np.ndarray):
    """Mid-ranks (1-based, ties averaged) plus tie-group sizes."""
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    ties = []
    i = 0
    n = len(pooled)
    sorted_vals = pooled[order]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg_rank = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg_rank
        if j > i:
            ties.append(j - i + 1)
        i = j + 1
    return ranks, ties


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized upper incomplete
    gamma; at df=2 this is exactly exp(-x/2)."""
    return float(gammaincc(df / 2.0, x / 2.0))


def kruskal_wallis(groups: Sequence[Sequence[float]]):
    """Kruskal-Wallis H with mid-ranking and tie correction; p from the
    chi-square survival function at k-1 degrees of freedom.

    When every pooled value is identical, H is undefined and (0, 1) is
    returned.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("each group must be non-empty")
    pooled = np.concatenate(arrays)
    n = len(pooled)
    if n < 3:
        raise ValueError("total sample size must be at least 3")
    if np.all(pooled == pooled[0]):
        return 0.0, 1.0
    ranks, ties = _midranks(pooled)
    h = 0.0
    start = 0
    for a in arrays:
        r = ranks[start : start + a.size]
        h += a.size * (r.mean() ** 2)
        start += a.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    tie_term = sum(t**3 - t for t in ties)
    correction = 1.0 - tie_term / (n**3 - n)
    if correction <= 0.0:
        return 0.0, 1.0
    h /= correction
    return float(h), chi2_sf(float(h), len(groups) - 1)


def select_best(reports: Sequence[ErrorReport], count: int) -> list[AlgorithmId]:
    """Rank algorithms by full-range average MAE, then error variance, then
    declaration order; return the best `count`."""
    if count > len(reports):
        raise ValueError("count exceeds number of reports")
    declaration = list(AlgorithmId)
    ranked = sorted(
        reports,
        key=lambda r: (
            r.band_avg[DoseBand.FULL.label],
            r.error_variance,
            declaration.index(r.algorithm),
        ),
    )
    return [r.algorithm for r in ranked[:count]]


def ensemble_predict(models: Sequence, features: FeatureVector) -> CumulativeDVH:
    """Per-bin arithmetic mean of member predictions.  The mean of
    non-increasing curves is non-increasing, which the constructor asserts."""
    if not models:
        raise ValueError("ensemble needs at least one member")
    grid = models[0].grid
    curves = []
    for m in models:
        if m.grid != grid:
            raise ValueError("ensemble members must share a dose grid")
        curves.append(np.asarray(m.predict_curve(features).volume_pct))
    return CumulativeDVH(grid, np.mean(curves, axis=0))


@dataclass(frozen=True)
class EnsembleModel:
    """Prediction-averaging ensemble presenting the same surface as a single
    trained model (predict_curve / algorithm / organ / grid)."""

    algorithm: AlgorithmId
    organ: Organ
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        organs = {m.organ for m in self.members}
        if organs != {self.organ}:
            raise ValueError("ensemble members must target the ensemble's organ")

    @property
    def grid(self):
        return self.members[0].grid

    @property
    def member_algorithms(self) -> list:
        return [m.algorithm for m in self.members]

    def predict_curve(self, features: FeatureVector) -> CumulativeDVH:
        return ensemble_predict(self.members, features)


def split_cohort(cohort: Sequence[PatientRecord], ratio: float = 0.7, seed: int = 0):
    """Seeded shuffle then floor(ratio * n) records to the training side
    (94 records at 0.7 gives the 65/29 split)."""
    if len(cohort) < 2:
        raise ValueError("need at least 2 records to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(cohort))
    n_train = int(np.floor(ratio * len(cohort)))
    train = [cohort[i] for i in perm[:n_train]]
    test = [cohort[i] for i in perm[n_train:]]
    return train, test
