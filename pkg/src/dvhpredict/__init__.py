"""DVH prediction toolkit: predict bladder/rectum cumulative dose-volume
histograms for prostate radiotherapy from six structure-volume features."""

from .core import (
    CumulativeDVH,
    DoseGrid,
    FeatureVector,
    Organ,
    PatientRecord,
    RecordSource,
    canonical_grid,
    enforce_monotone,
    resample_to_grid,
    value_at,
)
from .regressors import AlgorithmId, TrainedDvhModel, predict_dvh, train_dvh_model

__version__ = "0.1.0"

__all__ = [
    "AlgorithmId",
    "CumulativeDVH",
    "DoseGrid",
    "FeatureVector",
    "Organ",
    "PatientRecord",
    "RecordSource",
    "TrainedDvhModel",
    "canonical_grid",
    "enforce_monotone",
    "predict_dvh",
    "resample_to_grid",
    "train_dvh_model",
    "value_at",
    "__version__",
]
