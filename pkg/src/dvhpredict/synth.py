"""Seeded synthetic cohorts for desk-scale end-to-end runs.

Clinical DVH libraries are not shippable, so tests and demos run on
generated cohorts: features drawn uniformly from configured ranges and, per
organ, a logistic ground-truth curve whose midpoint rises with the overlap
fraction and whose width grows with organ volume.  Deliberately simple and
monotone in the overlap fraction so model-quality assertions mean something;
never a claim about real anatomy.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    CumulativeDVH,
    DoseGrid,
    FeatureVector,
    Organ,
    PatientRecord,
    RecordSource,
    canonical_grid,
    monotone_projection,
)
from .errors import InvalidConfig
from .ingest import StructureDvhBlock, Unit, format_eclipse_text, format_tomo_csv


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_patients: int = 94
    ptv60_cc: tuple = (40.0, 200.0)
    ptv44_cc: tuple = (200.0, 800.0)
    rectum_cc: tuple = (40.0, 120.0)
    bladder_cc: tuple = (80.0, 400.0)
    rectum_overlap_frac: tuple = (0.05, 0.35)
    bladder_overlap_frac: tuple = (0.05, 0.35)
    noise_std: float = 0.0
    # curve family: midpoint d50 = d50_base + d50_per_overlap * overlap_frac,
    # width w = width_base + width_per_cc * organ_cc  (both cGy)
    d50_base: float = 3000.0
    d50_per_overlap: float = 3200.0
    width_base: float = 300.0
    width_per_cc: float = 0.5

    def __post_init__(self):
        if self.n_patients < 1:
            raise InvalidConfig("n_patients must be >= 1")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be >= 0")
        for name in ("ptv60_cc", "ptv44_cc", "rectum_cc", "bladder_cc"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo or (name in ("rectum_cc", "bladder_cc") and lo <= 0):
                raise InvalidConfig(f"bad range for {name}: {(lo, hi)}")
        for name in ("rectum_overlap_frac", "bladder_overlap_frac"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi <= 1.0):
                raise InvalidConfig(f"bad range for {name}: {(lo, hi)}")
        if self.width_base <= 0:
            raise InvalidConfig("width_base must be > 0")


def _logistic_curve(doses: np.ndarray, d50: float, width: float) -> np.ndarray:
    return 100.0 / (1.0 + np.exp(-(d50 - doses) / width))


def ground_truth_curve(config: SynthConfig, organ_cc: float, overlap_frac: float,
                       grid: DoseGrid) -> np.ndarray:
    d50 = config.d50_base + config.d50_per_overlap * overlap_frac
    width = config.width_base + config.width_per_cc * organ_cc
    return _logistic_curve(grid.doses, d50, width)


def _uniform(rng: np.random.Generator, lo_hi: tuple) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def synth_cohort(config: SynthConfig, grid: DoseGrid | None = None) -> list[PatientRecord]:
    """Generate a deterministic cohort: per-patient sub-seeds are spawned from
    the master seed, so the same config always produces byte-identical data."""
    grid = grid or canonical_grid()
    children = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    cohort = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        features = FeatureVector(
            ptv60_cc=_uniform(rng, config.ptv60_cc),
            ptv44_cc=_uniform(rng, config.ptv44_cc),
            rectum_cc=_uniform(rng, config.rectum_cc),
            bladder_cc=_uniform(rng, config.bladder_cc),
            rectum_overlap_frac=_uniform(rng, config.rectum_overlap_frac),
            bladder_overlap_frac=_uniform(rng, config.bladder_overlap_frac),
        )
        dvh = {}
        for organ, organ_cc, frac in (
            (Organ.BLADDER, features.bladder_cc, features.bladder_overlap_frac),
            (Organ.RECTUM, features.rectum_cc, features.rectum_overlap_frac),
        ):
            curve = ground_truth_curve(config, organ_cc, frac, grid)
            if config.noise_std > 0:
                curve = curve + rng.normal(0.0, config.noise_std, size=grid.n_bins)
            dvh[organ] = CumulativeDVH(grid, monotone_projection(curve))
        cohort.append(
            PatientRecord(
                case_id=f"SYN-{config.seed}-{i:03d}",
                features=features,
                dvh=dvh,
                source=RecordSource.SYNTHETIC,
            )
        )
    return cohort


# --- fixture emission ---------------------------------------------------------

_STRUCTURE_NAMES = {
    "ptv60": "PTV60",
    "ptv44": "PTV44",
    "bladder": "Bladder",
    "rectum": "Rectum",
    "bladder_overlap": "Bladder_PTV60_Overlap",
    "rectum_overlap": "Rectum_PTV60_Overlap",
}


def _rows(doses: np.ndarray, values: np.ndarray) -> tuple:
    return tuple((float(d), float(v)) for d, v in zip(doses, values))


def record_to_blocks(record: PatientRecord, grid: DoseGrid | None = None) -> list[StructureDvhBlock]:
    """Expand a record into the six structure blocks of a TPS export.

    Organ blocks carry the record's true curves; PTV and overlap blocks carry
    plausible filler curves (their rows are never read back - only their
    header volumes are).  Dose 0 is included the way real exports do.
    """
    grid = grid or record.dvh[Organ.BLADDER].grid
    doses = np.concatenate(([0.0], grid.doses))
    f = record.features
    blocks = []

    def filler(d50: float, width: float) -> np.ndarray:
        return np.concatenate(([100.0], monotone_projection(_logistic_curve(grid.doses, d50, width))))

    def organ_curve(organ: Organ) -> np.ndarray:
        return np.concatenate(([100.0], np.asarray(record.dvh[organ].volume_pct)))

    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["ptv60"], f.ptv60_cc, Unit.PERCENT,
                                    _rows(doses, filler(6150.0, 80.0))))
    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["ptv44"], f.ptv44_cc, Unit.PERCENT,
                                    _rows(doses, filler(5200.0, 400.0))))
    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["bladder"], f.bladder_cc, Unit.PERCENT,
                                    _rows(doses, organ_curve(Organ.BLADDER))))
    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["rectum"], f.rectum_cc, Unit.PERCENT,
                                    _rows(doses, organ_curve(Organ.RECTUM))))
    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["bladder_overlap"],
                                    f.bladder_overlap_frac * f.bladder_cc, Unit.PERCENT,
                                    _rows(doses, filler(6000.0, 120.0))))
    blocks.append(StructureDvhBlock(_STRUCTURE_NAMES["rectum_overlap"],
                                    f.rectum_overlap_frac * f.rectum_cc, Unit.PERCENT,
                                    _rows(doses, filler(6000.0, 120.0))))
    return blocks


def write_fixtures(cohort, out_dir, fmt: str = "eclipse") -> list[Path]:
    """Write one export file per record in the requested fixture format
    ('eclipse' text, 'tomo' CSV, or 'both' alternating)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt not in ("eclipse", "tomo", "both"):
        raise InvalidConfig(f"unknown fixture format {fmt!r}")
    paths = []
    for i, record in enumerate(cohort):
        blocks = record_to_blocks(record)
        use_tomo = fmt == "tomo" or (fmt == "both" and i % 2 == 1)
        if use_tomo:
            path = out_dir / f"{record.case_id}.csv"
            path.write_text(format_tomo_csv(blocks))
        else:
            path = out_dir / f"{record.case_id}.txt"
            path.write_text(format_eclipse_text(record.case_id, blocks))
        paths.append(path)
    return paths
