"""Dose grids, cumulative DVH curves and patient-level domain types.

A cumulative DVH gives, for each dose level, the percentage of an organ's
volume receiving at least that dose.  Curves live on a uniform dose axis;
the canonical axis is 10..6420 cGy in 10 cGy steps (642 bins), with dose 0
implicit at 100% volume.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DoseOutOfRange,
    InvalidFeatures,
    MismatchedLengths,
    NonMonotoneDoseAxis,
)

CANONICAL_START_CGY = 10.0
CANONICAL_STEP_CGY = 10.0
CANONICAL_N_BINS = 642

FEATURE_NAMES = (
    "ptv60_cc",
    "ptv44_cc",
    "rectum_cc",
    "bladder_cc",
    "rectum_overlap_frac",
    "bladder_overlap_frac",
)
N_FEATURES = len(FEATURE_NAMES)


class Organ(str, Enum):
    BLADDER = "bladder"
    RECTUM = "rectum"


class RecordSource(str, Enum):
    ECLIPSE_TEXT = "eclipse_text"
    TOMO_CSV = "tomo_csv"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class DoseGrid:
    """Uniform dose axis in cGy.  Bin i sits at start + i*step."""

    start_cgy: float = CANONICAL_START_CGY
    step_cgy: float = CANONICAL_STEP_CGY
    n_bins: int = CANONICAL_N_BINS

    def __post_init__(self):
        if self.step_cgy <= 0:
            raise ValueError("step_cgy must be positive")
        if self.n_bins <= 0:
            raise ValueError("n_bins must be positive")

    @property
    def doses(self) -> np.ndarray:
        return self.start_cgy + self.step_cgy * np.arange(self.n_bins, dtype=float)

    @property
    def max_dose(self) -> float:
        return self.start_cgy + self.step_cgy * (self.n_bins - 1)

    def to_dict(self) -> dict:
        return {
            "start_cgy": self.start_cgy,
            "step_cgy": self.step_cgy,
            "n_bins": self.n_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DoseGrid":
        return cls(float(d["start_cgy"]), float(d["step_cgy"]), int(d["n_bins"]))


def canonical_grid() -> DoseGrid:
    return DoseGrid()


def monotone_projection(values: Sequence[float], lo: float = 0.0, hi: float = 100.0) -> np.ndarray:
    """Least-squares non-increasing projection (pool-adjacent-violators), then
    clamp to [lo, hi].

    Pool-adjacent-violators merges every run that violates the non-increasing
    order into its mean, which is the exact L2 projection onto the monotone
    cone.  Idempotent.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    # blocks kept as (sum, count); a violation is block_mean[i] < block_mean[i+1]
    sums: list[float] = []
    counts: list[int] = []
    for x in v:
        s, c = float(x), 1
        while sums and sums[-1] * c < s * counts[-1]:
            s += sums.pop()
            c += counts.pop()
        sums.append(s)
        counts.append(c)
    out = np.repeat([s / c for s, c in zip(sums, counts)], counts)
    return np.clip(out, lo, hi)


@dataclass(frozen=True, eq=False)
class CumulativeDVH:
    """A percent-volume curve on a dose grid.

    Invariants enforced at construction: one value per bin, every value in
    [0, 100], non-increasing along the dose axis.
    """

    grid: DoseGrid
    volume_pct: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.volume_pct, dtype=float)
        if v.shape != (self.grid.n_bins,):
            raise MismatchedLengths(
                f"expected {self.grid.n_bins} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("volume_pct must be finite")
        if v.min() < 0.0 or v.max() > 100.0:
            raise ValueError("volume_pct must lie within [0, 100]")
        if np.any(np.diff(v) > 0.0):
            raise ValueError("cumulative DVH must be non-increasing in dose")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "volume_pct", v)

    def value_at(self, dose_cgy: float) -> float:
        return value_at(self, dose_cgy)

    def to_dict(self) -> dict:
        return {
            "start_cgy": self.grid.start_cgy,
            "step_cgy": self.grid.step_cgy,
            "values": [float(x) for x in self.volume_pct],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CumulativeDVH":
        values = np.asarray(d["values"], dtype=float)
        grid = DoseGrid(float(d["start_cgy"]), float(d["step_cgy"]), len(values))
        return cls(grid, values)


def enforce_monotone(curve: CumulativeDVH) -> CumulativeDVH:
    """Restore the cumulative-DVH property on a curve (PAV projection + clamp)."""
    return CumulativeDVH(curve.grid, monotone_projection(curve.volume_pct))


def resample_to_grid(doses: Sequence[float], volumes: Sequence[float], grid: DoseGrid) -> CumulativeDVH:
    """Linearly interpolate an exported (dose, volume%) table onto `grid`.

    Grid doses above the table's maximum map to 0, below its minimum map to
    the first tabulated volume.  The result is monotone-projected so the
    output is always a valid cumulative DVH.
    """
    d = np.asarray(doses, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if d.shape != v.shape:
        raise MismatchedLengths(f"doses {d.shape} vs volumes {v.shape}")
    if d.size < 2:
        raise MismatchedLengths("need at least two (dose, volume) points")
    if np.any(np.diff(d) <= 0.0):
        raise NonMonotoneDoseAxis("dose axis must be strictly increasing")
    if v.min() < 0.0 or v.max() > 100.0:
        raise ValueError("volumes must lie within [0, 100]")
    out = np.interp(grid.doses, d, v, left=float(v[0]), right=0.0)
    return CumulativeDVH(grid, monotone_projection(out))


def value_at(curve: CumulativeDVH, dose_cgy: float) -> float:
    """Percent volume at an arbitrary dose; dose 0 is 100% by definition."""
    if not 0.0 <= dose_cgy <= curve.grid.max_dose:
        raise DoseOutOfRange(
            f"dose {dose_cgy} outside [0, {curve.grid.max_dose}] cGy"
        )
    doses = curve.grid.doses
    values = curve.volume_pct
    if curve.grid.start_cgy > 0.0:
        doses = np.concatenate(([0.0], doses))
        values = np.concatenate(([100.0], values))
    return float(np.interp(dose_cgy, doses, values))


@dataclass(frozen=True)
class FeatureVector:
    """The six structure-volume inputs: four absolute volumes in cc and the
    two OAR/PTV60 overlap fractions."""

    ptv60_cc: float
    ptv44_cc: float
    rectum_cc: float
    bladder_cc: float
    rectum_overlap_frac: float
    bladder_overlap_frac: float

    def __post_init__(self):
        for name in ("ptv60_cc", "ptv44_cc"):
            if getattr(self, name) < 0:
                raise InvalidFeatures(f"{name} must be >= 0")
        for name in ("rectum_cc", "bladder_cc"):
            if getattr(self, name) <= 0:
                raise InvalidFeatures(f"{name} must be > 0")
        for name in ("rectum_overlap_frac", "bladder_overlap_frac"):
            frac = getattr(self, name)
            if not 0.0 <= frac <= 1.0:
                raise InvalidFeatures(f"{name} must lie in [0, 1]")
        for name in FEATURE_NAMES:
            if not np.isfinite(getattr(self, name)):
                raise InvalidFeatures(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    def to_dict(self) -> dict:
        return {n: float(getattr(self, n)) for n in FEATURE_NAMES}

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "FeatureVector":
        missing = [n for n in FEATURE_NAMES if n not in d]
        if missing:
            raise InvalidFeatures(f"missing feature(s): {missing}")
        return cls(**{n: float(d[n]) for n in FEATURE_NAMES})


@dataclass(frozen=True)
class PatientRecord:
    """One de-identified case: features plus the clinical DVH of each organ."""

    case_id: str
    features: FeatureVector
    dvh: Mapping[Organ, CumulativeDVH]
    source: RecordSource = RecordSource.SYNTHETIC

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        for organ in Organ:
            if organ not in self.dvh:
                raise ValueError(f"record {self.case_id} missing organ {organ.value}")
        object.__setattr__(self, "dvh", dict(self.dvh))

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "source": self.source.value,
            "features": self.features.to_dict(),
            "dvh": {o.value: c.to_dict() for o, c in self.dvh.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        return cls(
            case_id=str(d["case_id"]),
            features=FeatureVector.from_dict(d["features"]),
            dvh={Organ(k): CumulativeDVH.from_dict(v) for k, v in d["dvh"].items()},
            source=RecordSource(d.get("source", "synthetic")),
        )


def feature_matrix(cohort: Sequence[PatientRecord]) -> np.ndarray:
    """Stack a cohort's feature vectors into an (n, 6) array."""
    return np.stack([r.features.as_array() for r in cohort])


def target_matrix(cohort: Sequence[PatientRecord], organ: Organ) -> np.ndarray:
    """Stack a cohort's per-bin percent volumes for one organ into (n, n_bins)."""
    return np.stack([np.asarray(r.dvh[organ].volume_pct) for r in cohort])
