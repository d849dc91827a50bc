"""Exception hierarchy shared across the toolkit.

Everything user-facing derives from DvhPredictError so the CLI can map
input problems to exit code 1 and genuine bugs to exit code 2.
"""


class DvhPredictError(Exception):
    """Base class for all input / domain errors raised by this package."""


# --- curve / grid ---------------------------------------------------------

class MismatchedLengths(DvhPredictError):
    pass


class NonMonotoneDoseAxis(DvhPredictError):
    pass


class DoseOutOfRange(DvhPredictError):
    pass


class InvalidFeatures(DvhPredictError):
    pass


# --- TPS export parsing ---------------------------------------------------

class MalformedHeader(DvhPredictError):
    pass


class MissingDoseTable(DvhPredictError):
    pass


class UnitNotRecognized(DvhPredictError):
    pass


class StructureUnresolved(DvhPredictError):
    def __init__(self, target: str):
        self.target = target
        super().__init__(f"no structure block resolved for target {target!r}")


class AmbiguousMatch(DvhPredictError):
    def __init__(self, target: str, names=()):
        self.target = target
        self.names = tuple(names)
        super().__init__(
            f"multiple structure blocks match target {target!r}: {list(names)}"
        )


class ZeroOrganVolume(DvhPredictError):
    pass


# --- regression -----------------------------------------------------------

class ConstantFeature(DvhPredictError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"feature column {index} is constant; cannot standardize")


class SingularSystem(DvhPredictError):
    pass


class NotConverged(DvhPredictError):
    def __init__(self, max_iter: int):
        self.max_iter = max_iter
        super().__init__(f"coordinate descent did not converge in {max_iter} sweeps")


class EmptyTrainingSet(DvhPredictError):
    pass


class DivergedLoss(DvhPredictError):
    pass


class BinFitError(DvhPredictError):
    """Wraps a fit failure with the offending dose-bin index."""

    def __init__(self, bin_index: int, cause: Exception):
        self.bin_index = bin_index
        self.cause = cause
        super().__init__(f"fit failed at dose bin {bin_index}: {cause}")


# --- evaluation -----------------------------------------------------------

class EmptyBand(DvhPredictError):
    pass


class EmptyCohort(DvhPredictError):
    pass


# --- weibull --------------------------------------------------------------

class ZeroVariance(DvhPredictError):
    pass


class InsufficientPositive(DvhPredictError):
    pass


class DegenerateFit(DvhPredictError):
    pass


# --- synthetic cohorts ----------------------------------------------------

class InvalidConfig(DvhPredictError):
    pass


# --- CLI / persistence / service -------------------------------------------

class TooFewRecords(DvhPredictError):
    pass


class NoParseableFiles(DvhPredictError):
    pass


class PiiDetected(DvhPredictError):
    def __init__(self, path: str, lines):
        self.path = path
        self.lines = list(lines)
        super().__init__(f"identifying information found in {path}: lines {self.lines}")


class VersionMismatch(DvhPredictError):
    pass


class CorruptBundle(DvhPredictError):
    pass


class EmptyValidation(DvhPredictError):
    pass
