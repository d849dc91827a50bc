"""Model bundle persistence and the shared prediction payload builder.

Bundle container layout (little-endian):

    magic   b"DVHM"
    u32     format version (currently 1)
    u32     section count
    per section:
        u32  name length, then the UTF-8 name (e.g. "model/RF/bladder")
        u64  payload length, then the payload (zlib-compressed UTF-8 JSON)
    trailer b"DGST" + 32-byte SHA-256 of every preceding byte

A human-readable JSON sidecar (<path>.meta.json) duplicates the metadata.
Floats serialize via repr, so save -> load -> predict is bit-identical.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import CumulativeDVH, FeatureVector, Organ, value_at
from .errors import CorruptBundle, VersionMismatch
from .evaluation import POINT_DOSES_CGY, EnsembleModel
from .regressors import AlgorithmId, TrainedDvhModel

MAGIC = b"DVHM"
TRAILER = b"DGST"
FORMAT_VERSION = 1

# Editable deployment defaults, not clinical guidance: (dose cGy, max volume %).
DEFAULT_CONSTRAINTS = {
    "bladder": [[5300.0, 50.0], [5600.0, 35.0], [6000.0, 25.0]],
    "rectum": [[5300.0, 50.0], [5600.0, 35.0], [6000.0, 20.0]],
}


def _sections_to_bytes(sections: list[tuple[str, dict]]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(sections))
    for name, payload in sections:
        name_b = name.encode()
        body = zlib.compress(json.dumps(payload).encode())
        out += struct.pack("<I", len(name_b))
        out += name_b
        out += struct.pack("<Q", len(body))
        out += body
    out += TRAILER + hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def _sections_from_bytes(data: bytes) -> list[tuple[str, dict]]:
    if len(data) < 12 + len(TRAILER) + 32 or data[:4] != MAGIC:
        raise CorruptBundle("not a model bundle (bad magic)")
    body, trailer = data[: -(len(TRAILER) + 32)], data[-(len(TRAILER) + 32) :]
    if trailer[:4] != TRAILER:
        raise CorruptBundle("missing digest trailer")
    if hashlib.sha256(body).digest() != trailer[4:]:
        raise CorruptBundle("digest mismatch: bundle is corrupt")
    version, n_sections = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"bundle format {version}, expected {FORMAT_VERSION}")
    sections = []
    offset = 12
    for _ in range(n_sections):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode()
        offset += name_len
        (payload_len,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        payload = json.loads(zlib.decompress(data[offset : offset + payload_len]))
        offset += payload_len
        sections.append((name, payload))
    return sections


@dataclass
class ModelBundle:
    """Loaded bundle: per (algorithm, organ) trained models plus metadata
    (ensemble membership, split counts, fingerprints)."""

    models: dict
    meta: dict

    def organs(self) -> list[Organ]:
        return sorted({organ for _, organ in self.models}, key=lambda o: o.value)

    def base_algorithms(self, organ: Organ) -> list[AlgorithmId]:
        present = [a for a, o in self.models if o is organ]
        return sorted(present, key=list(AlgorithmId).index)

    def ensemble_members(self, organ: Organ, algorithm: AlgorithmId) -> list[AlgorithmId] | None:
        members = self.meta.get("ensembles", {}).get(organ.value, {}).get(algorithm.value)
        if members is None:
            return None
        return [AlgorithmId(m) for m in members]

    def algorithms(self, organ: Organ) -> list[AlgorithmId]:
        algos = self.base_algorithms(organ)
        for ens in (AlgorithmId.ENSEMBLE3, AlgorithmId.ENSEMBLE6):
            if self.ensemble_members(organ, ens):
                algos.append(ens)
        return algos

    def model_for(self, algorithm: AlgorithmId, organ: Organ):
        if algorithm in (AlgorithmId.ENSEMBLE3, AlgorithmId.ENSEMBLE6):
            members = self.ensemble_members(organ, algorithm)
            if not members:
                raise KeyError(f"{algorithm.value} is not defined for {organ.value}")
            return EnsembleModel(
                algorithm=algorithm,
                organ=organ,
                members=tuple(self.models[(m, organ)] for m in members),
            )
        try:
            return self.models[(algorithm, organ)]
        except KeyError:
            raise KeyError(f"{algorithm.value} not in bundle for {organ.value}") from None

    def predict(self, features: FeatureVector, organ: Organ, algorithm: AlgorithmId) -> CumulativeDVH:
        return self.model_for(algorithm, organ).predict_curve(features)


def save_bundle(path, models: dict, meta: dict) -> Path:
    """Write models plus metadata to the binary container and a JSON sidecar."""
    path = Path(path)
    meta = dict(meta)
    meta.setdefault("format_version", FORMAT_VERSION)
    meta.setdefault("created_at", datetime.now(timezone.utc).isoformat())
    meta.setdefault("toolkit_version", __version__)
    meta["fingerprints"] = {
        f"{a.value}/{o.value}": m.training_fingerprint for (a, o), m in models.items()
    }
    sections = [("meta", meta)]
    for (algorithm, organ), model in sorted(
        models.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
    ):
        sections.append((f"model/{algorithm.value}/{organ.value}", model.to_payload()))
    path.write_bytes(_sections_to_bytes(sections))
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(path) -> ModelBundle:
    data = Path(path).read_bytes()
    sections = _sections_from_bytes(data)
    meta = {}
    models = {}
    for name, payload in sections:
        if name == "meta":
            meta = payload
            continue
        if not name.startswith("model/"):
            raise CorruptBundle(f"unknown section {name!r}")
        model = TrainedDvhModel.from_payload(payload)
        key = f"{model.algorithm.value}/{model.organ.value}"
        expected = name[len("model/") :]
        if key != expected:
            raise CorruptBundle(f"section {name!r} holds model {key!r}")
        models[(model.algorithm, model.organ)] = model
    stored = meta.get("fingerprints", {})
    for (algorithm, organ), model in models.items():
        key = f"{algorithm.value}/{organ.value}"
        if stored.get(key) != model.training_fingerprint:
            raise CorruptBundle(f"fingerprint mismatch for {key}")
    return ModelBundle(models=models, meta=meta)


def constraint_flags(curve: CumulativeDVH, limits) -> list[dict]:
    """Evaluate (dose, max percent) constraints against a predicted curve."""
    out = []
    for dose, max_pct in limits:
        predicted = value_at(curve, float(dose))
        out.append(
            {
                "dose_cgy": float(dose),
                "max_volume_pct": float(max_pct),
                "predicted_pct": predicted,
                "pass": bool(predicted <= float(max_pct)),
            }
        )
    return out


def prediction_payload(
    bundle: ModelBundle,
    features: FeatureVector,
    organ: Organ,
    algorithms: list[AlgorithmId] | None = None,
    band=None,
    constraints: dict | None = None,
) -> dict:
    """The shared prediction response: per-algorithm curves, point-dose
    readouts, optional band overlay and constraint flags.  Used verbatim by
    both the CLI and the HTTP service so their outputs match exactly."""
    if algorithms is None:
        algorithms = bundle.algorithms(organ)
    curves = {}
    point_doses = {}
    flags = {}
    limits = (constraints or {}).get(organ.value)
    for algorithm in algorithms:
        curve = bundle.predict(features, organ, algorithm)
        curves[algorithm.value] = curve.to_dict()
        point_doses[algorithm.value] = {
            f"{d:.0f}": value_at(curve, d) for d in POINT_DOSES_CGY
        }
        if limits:
            flags[algorithm.value] = constraint_flags(curve, limits)
    payload = {
        "organ": organ.value,
        "features": features.to_dict(),
        "algorithms": [a.value for a in algorithms],
        "curves": curves,
        "point_doses": point_doses,
        "constraint_flags": flags,
        "band": None,
    }
    if band is not None:
        payload["band"] = {
            "start_cgy": band.grid.start_cgy,
            "step_cgy": band.grid.step_cgy,
            "lower": [float(x) for x in band.lower],
            "upper": [float(x) for x in band.upper],
            "fit_status": [s.value for s in band.fit_status],
        }
    return payload
