"""Exception types raised across the package."""


class FqraError(Exception):
    """Base class for all package errors."""


class DataError(FqraError, ValueError):
    pass


class MalformedHeaderError(DataError):
    pass


class NonMonotoneTimestampsError(DataError):
    pass


class UnknownSeriesError(DataError):
    pass


class GapAtBoundaryError(DataError):
    pass


class MissingDayError(DataError):
    pass


class DegenerateSampleError(DataError):
    pass


class InsufficientHistoryError(FqraError, ValueError):
    pass


class DimensionMismatchError(FqraError, ValueError):
    pass


class UnknownTauError(FqraError, KeyError):
    pass


class KTooLargeError(FqraError, ValueError):
    pass


class NonFiniteInputError(FqraError, ValueError):
    pass


class DegenerateDesignError(FqraError, ValueError):
    pass


class NonConvergenceError(FqraError, RuntimeError):
    pass


class LevelNotOnGridError(FqraError, ValueError):
    pass


class MisalignedIndexError(FqraError, ValueError):
    pass


class BoundaryOutOfRangeError(FqraError, ValueError):
    pass


class ConfigError(FqraError, ValueError):
    pass


class MissingStageError(FqraError, FileNotFoundError):
    pass


class StageError(FqraError, RuntimeError):
    """Wraps an upstream failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
