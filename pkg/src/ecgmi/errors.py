"""Exception hierarchy shared across the pipeline."""


class EcgMiError(Exception):
    """Base class for every error raised by this package."""


class DataError(EcgMiError):
    """Input data is malformed or unusable (CLI exit code 2)."""


# ingest
class MalformedHeader(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class TruncatedData(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class LeadNotFound(DataError):
    pass


# signal preparation
class InvalidCutoff(ValueError, EcgMiError):
    pass


class SignalTooShort(DataError):
    pass


class NoBeatsFound(DataError):
    pass


class TooFewBeats(DataError):
    pass


# raster / augment
class SegmentTooShort(DataError):
    pass


class MalformedPgm(DataError):
    pass


class WrongDimensions(DataError):
    pass


# network
class ShapeMismatch(ValueError, EcgMiError):
    pass


class OddDimensions(ValueError, EcgMiError):
    pass


class SingleClassTraining(DataError):
    pass


class NonFiniteLoss(EcgMiError):
    pass


class MalformedCheckpoint(DataError):
    pass


# svm
class DimensionMismatch(ValueError, EcgMiError):
    pass


class InvalidModel(ValueError, EcgMiError):
    pass


# evaluation
class EmptyMatrix(ValueError, EcgMiError):
    pass


class TooFewItems(DataError):
    pass


class IterationLimit(UserWarning):
    """SMO stopped at its iteration cap; the returned model is best-so-far."""
