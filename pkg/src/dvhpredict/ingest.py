"""Rule-based text mining of TPS DVH exports.

Two export layouts are supported:

* Eclipse-style text: ``Patient ID:`` header, then repeated structure
  sections (``Structure:`` / ``Volume [cm3]:`` / blank line / column header /
  numeric rows).
* Tomo-style CSV: header ``structure,dose_cgy,value,unit,structure_volume_cc``
  (any column order), one data row per bin.

Structure names are mapped onto the six model targets by ordered
case-insensitive patterns; ``*`` in a pattern matches any run of characters,
a plain pattern matches as a substring.  Ambiguity is an error, never a guess.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CumulativeDVH,
    DoseGrid,
    FeatureVector,
    Organ,
    PatientRecord,
    RecordSource,
    canonical_grid,
    resample_to_grid,
)
from .errors import (
    AmbiguousMatch,
    MalformedHeader,
    MissingDoseTable,
    NonMonotoneDoseAxis,
    StructureUnresolved,
    UnitNotRecognized,
    ZeroOrganVolume,
)


class Unit(str, Enum):
    PERCENT = "pct"
    CC = "cc"


@dataclass(frozen=True)
class StructureDvhBlock:
    """One structure's DVH table as exported: name, total volume, unit and
    (dose cGy, value) rows.  Overlap structures may legitimately have zero
    volume (empty overlap), so only non-negativity is required here."""

    structure_name: str
    structure_volume_cc: float
    unit: Unit
    rows: tuple

    def __post_init__(self):
        if not self.rows:
            raise MissingDoseTable(f"structure {self.structure_name!r} has no rows")
        if self.structure_volume_cc < 0:
            raise ValueError("structure volume must be >= 0")
        doses = np.array([r[0] for r in self.rows], dtype=float)
        if np.any(np.diff(doses) <= 0.0):
            raise NonMonotoneDoseAxis(
                f"dose column of {self.structure_name!r} is not strictly increasing"
            )
        object.__setattr__(self, "rows", tuple((float(d), float(v)) for d, v in self.rows))


# The six targets, in resolution order.  Overlap structures are claimed first
# so that a generic organ pattern like "bladder" cannot also swallow the
# overlap block; each resolved target removes its block from the pool.
TARGETS = ("bladder_overlap", "rectum_overlap", "ptv60", "ptv44", "bladder", "rectum")


@dataclass(frozen=True)
class StructureNameRules:
    """Ordered match patterns per target.  First pattern with exactly one
    unclaimed match wins; a pattern matching several blocks is ambiguous."""

    patterns: dict

    def __post_init__(self):
        for target in TARGETS:
            if not self.patterns.get(target):
                raise ValueError(f"target {target!r} needs at least one pattern")

    def to_dict(self) -> dict:
        return {t: list(p) for t, p in self.patterns.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "StructureNameRules":
        return cls({t: tuple(p) for t, p in d.items()})


def default_rules() -> StructureNameRules:
    # How overlap structures are named varies per clinic; these defaults are
    # configuration, not ground truth.
    return StructureNameRules(
        {
            "bladder_overlap": (
                "bladder*ptv*60",
                "ptv*60*bladder",
                "bladder*overlap",
                "overlap*bladder",
                "bladder*ovl",
            ),
            "rectum_overlap": (
                "rect*ptv*60",
                "ptv*60*rect",
                "rect*overlap",
                "overlap*rect",
                "rect*ovl",
            ),
            "ptv60": ("ptv60", "ptv 60", "ptv_60"),
            "ptv44": ("ptv44", "ptv 44", "ptv_44"),
            "bladder": ("bladder",),
            "rectum": ("rectum", "anorectum"),
        }
    )


def _pattern_matches(pattern: str, name: str) -> bool:
    name = name.lower().strip()
    pattern = pattern.lower().strip()
    if "*" in pattern:
        regex = ".*".join(re.escape(part) for part in pattern.split("*"))
        return re.search(regex, name) is not None
    return pattern in name


def resolve_structures(blocks: Sequence[StructureDvhBlock], rules: StructureNameRules) -> dict:
    """Map the six targets onto blocks.  Deterministic: targets resolve in a
    fixed order and claim their block, so later generic patterns only see
    unclaimed structures."""
    unclaimed = list(blocks)
    resolved: dict[str, StructureDvhBlock] = {}
    for target in TARGETS:
        hit = None
        for pattern in rules.patterns[target]:
            matches = [b for b in unclaimed if _pattern_matches(pattern, b.structure_name)]
            if len(matches) > 1:
                raise AmbiguousMatch(target, [b.structure_name for b in matches])
            if matches:
                hit = matches[0]
                break
        if hit is None:
            raise StructureUnresolved(target)
        resolved[target] = hit
        unclaimed.remove(hit)
    return resolved


# --- Eclipse-style text ----------------------------------------------------

_PATIENT_ID_RE = re.compile(r"^\s*Patient ID\s*:\s*(.+?)\s*$", re.IGNORECASE)
_STRUCTURE_RE = re.compile(r"^\s*Structure\s*:\s*(.+?)\s*$", re.IGNORECASE)
_VOLUME_RE = re.compile(r"^\s*Volume\s*\[cm3\]\s*:\s*([0-9.eE+-]+)\s*$", re.IGNORECASE)
_HEADER_DOSE_RE = re.compile(r"Dose\s*\[(cGy|Gy)\]", re.IGNORECASE)
_HEADER_PCT_RE = re.compile(r"Volume\s*\[%\]", re.IGNORECASE)
_HEADER_CC_RE = re.compile(r"Volume\s*\[cm3\]", re.IGNORECASE)
_NUMROW_RE = re.compile(r"^\s*([0-9.eE+-]+)\s+([0-9.eE+-]+)\s*$")


def parse_eclipse_text(content: str) -> list[StructureDvhBlock]:
    """Parse an Eclipse-style text export into structure blocks.

    Doses are converted to cGy when the column header is in Gy; the unit tag
    records whether values are percent or cm3.
    """
    lines = content.splitlines()
    idx = 0
    n = len(lines)
    while idx < n and not lines[idx].strip():
        idx += 1
    if idx >= n or not _PATIENT_ID_RE.match(lines[idx]):
        raise MalformedHeader("export must start with a 'Patient ID:' line")
    idx += 1

    blocks: list[StructureDvhBlock] = []
    while idx < n:
        line = lines[idx]
        m = _STRUCTURE_RE.match(line)
        if not m:
            idx += 1
            continue
        name = m.group(1)
        idx += 1
        if idx >= n:
            raise MalformedHeader(f"structure {name!r}: truncated section")
        mv = _VOLUME_RE.match(lines[idx])
        if not mv:
            raise MalformedHeader(f"structure {name!r}: expected 'Volume [cm3]:' line")
        volume_cc = float(mv.group(1))
        idx += 1
        # skip blank separator lines
        while idx < n and not lines[idx].strip():
            idx += 1
        if idx >= n:
            raise MissingDoseTable(f"structure {name!r}: no dose table")
        header = lines[idx]
        md = _HEADER_DOSE_RE.search(header)
        if not md:
            raise MissingDoseTable(
                f"structure {name!r}: expected column header at line {idx + 1}"
            )
        dose_scale = 100.0 if md.group(1).lower() == "gy" else 1.0
        if _HEADER_PCT_RE.search(header):
            unit = Unit.PERCENT
        elif _HEADER_CC_RE.search(header):
            unit = Unit.CC
        else:
            raise UnitNotRecognized(f"structure {name!r}: header {header.strip()!r}")
        idx += 1
        rows = []
        while idx < n:
            mr = _NUMROW_RE.match(lines[idx])
            if not mr:
                break
            rows.append((float(mr.group(1)) * dose_scale, float(mr.group(2))))
            idx += 1
        if not rows:
            raise MissingDoseTable(f"structure {name!r}: dose table is empty")
        blocks.append(StructureDvhBlock(name, volume_cc, unit, tuple(rows)))
    if not blocks:
        raise MissingDoseTable("no structure sections found")
    return blocks


def format_eclipse_text(case_id: str, blocks: Iterable[StructureDvhBlock]) -> str:
    """Emit blocks in the Eclipse-style fixture layout (round-trips through
    parse_eclipse_text; floats use repr so values survive exactly)."""
    out = [f"Patient ID: {case_id}", ""]
    for b in blocks:
        col = (
            "Ratio of Total Structure Volume [%]"
            if b.unit is Unit.PERCENT
            else "Structure Volume [cm3]"
        )
        out.append(f"Structure: {b.structure_name}")
        out.append(f"Volume [cm3]: {b.structure_volume_cc!r}")
        out.append("")
        out.append(f"Dose [cGy]  {col}")
        for dose, value in b.rows:
            out.append(f"{dose!r}  {value!r}")
        out.append("")
    return "\n".join(out) + "\n"


# --- Tomo-style CSV ---------------------------------------------------------

TOMO_COLUMNS = ("structure", "dose_cgy", "value", "unit", "structure_volume_cc")


def parse_tomo_csv(content: str) -> list[StructureDvhBlock]:
    """Parse a Tomo-style CSV export; columns may appear in any order."""
    reader = csv.reader(io.StringIO(content))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeader("empty CSV document") from None
    cols = [c.strip().lower() for c in header]
    if sorted(cols) != sorted(TOMO_COLUMNS):
        raise MalformedHeader(f"expected columns {TOMO_COLUMNS}, got {header}")
    pos = {c: cols.index(c) for c in TOMO_COLUMNS}

    order: list[str] = []
    rows_by_structure: dict[str, list] = {}
    unit_by_structure: dict[str, str] = {}
    volume_by_structure: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(cols):
            raise MissingDoseTable(f"ragged row at line {lineno}")
        try:
            name = row[pos["structure"]].strip()
            dose = float(row[pos["dose_cgy"]])
            value = float(row[pos["value"]])
            unit = row[pos["unit"]].strip().lower()
            volume = float(row[pos["structure_volume_cc"]])
        except ValueError:
            raise MissingDoseTable(f"unparseable field at line {lineno}") from None
        if unit not in (Unit.PERCENT.value, Unit.CC.value):
            raise UnitNotRecognized(f"unit {unit!r} at line {lineno}")
        if name not in rows_by_structure:
            order.append(name)
            rows_by_structure[name] = []
            unit_by_structure[name] = unit
            volume_by_structure[name] = volume
        elif unit_by_structure[name] != unit:
            raise UnitNotRecognized(f"mixed units for structure {name!r}")
        rows_by_structure[name].append((dose, value))
    if not order:
        raise MissingDoseTable("CSV contains no data rows")
    return [
        StructureDvhBlock(
            name,
            volume_by_structure[name],
            Unit(unit_by_structure[name]),
            tuple(rows_by_structure[name]),
        )
        for name in order
    ]


def format_tomo_csv(blocks: Iterable[StructureDvhBlock]) -> str:
    out = [",".join(TOMO_COLUMNS)]
    for b in blocks:
        for dose, value in b.rows:
            out.append(
                f"{b.structure_name},{dose!r},{value!r},{b.unit.value},{b.structure_volume_cc!r}"
            )
    return "\n".join(out) + "\n"


# --- de-identification ------------------------------------------------------

DEFAULT_PII_PATTERNS = (
    r"patient\s*name\s*[:=]",
    r"\bname\s*[:=]",
    r"date\s*of\s*birth",
    r"\bdob\b",
    r"\bmrn\b",
)


def deidentify_check(content: str, patterns: Sequence[str] = DEFAULT_PII_PATTERNS):
    """Scan a document for identifier field labels.

    Returns (ok, offending) where offending is a list of (line number, line).
    """
    compiled = [re.compile(p, re.IGNORECASE) for p in patterns]
    offending = []
    for lineno, line in enumerate(content.splitlines(), start=1):
        if any(p.search(line) for p in compiled):
            offending.append((lineno, line))
    return (not offending, offending)


# --- record assembly --------------------------------------------------------

def extract_features(resolved: dict) -> FeatureVector:
    """Assemble the six features from resolved blocks: raw cc volumes plus
    overlap fractions (overlap cc / organ cc, clamped to [0, 1])."""
    def frac(overlap_key: str, organ_key: str) -> float:
        organ_cc = resolved[organ_key].structure_volume_cc
        if organ_cc <= 0:
            raise ZeroOrganVolume(f"{organ_key} volume must be positive")
        return float(np.clip(resolved[overlap_key].structure_volume_cc / organ_cc, 0.0, 1.0))

    return FeatureVector(
        ptv60_cc=resolved["ptv60"].structure_volume_cc,
        ptv44_cc=resolved["ptv44"].structure_volume_cc,
        rectum_cc=resolved["rectum"].structure_volume_cc,
        bladder_cc=resolved["bladder"].structure_volume_cc,
        rectum_overlap_frac=frac("rectum_overlap", "rectum"),
        bladder_overlap_frac=frac("bladder_overlap", "bladder"),
    )


def _block_to_curve(block: StructureDvhBlock, grid: DoseGrid) -> CumulativeDVH:
    doses = np.array([r[0] for r in block.rows], dtype=float)
    values = np.array([r[1] for r in block.rows], dtype=float)
    if block.unit is Unit.CC:
        if block.structure_volume_cc <= 0:
            raise ZeroOrganVolume(
                f"cannot convert cc rows of {block.structure_name!r}: zero volume"
            )
        values = values / block.structure_volume_cc * 100.0
    # contouring noise can push converted values marginally past the bounds
    values = np.clip(values, 0.0, 100.0)
    return resample_to_grid(doses, values, grid)


def build_record(
    blocks: Sequence[StructureDvhBlock],
    rules: StructureNameRules,
    case_id: str,
    source: RecordSource = RecordSource.ECLIPSE_TEXT,
    grid: DoseGrid | None = None,
) -> PatientRecord:
    """Resolve the six structures, convert organ curves to percent on the
    canonical grid and assemble the feature vector."""
    grid = grid or canonical_grid()
    resolved = resolve_structures(blocks, rules)
    features = extract_features(resolved)
    dvh = {
        Organ.BLADDER: _block_to_curve(resolved["bladder"], grid),
        Organ.RECTUM: _block_to_curve(resolved["rectum"], grid),
    }
    return PatientRecord(case_id=case_id, features=features, dvh=dvh, source=source)
