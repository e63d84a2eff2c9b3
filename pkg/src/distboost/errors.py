"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: validation failures exit 2,
numeric/runtime failures exit 3, I/O failures exit 4.
"""


class DistboostError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DistboostError):
    """Bad configuration, arguments, or precondition violations."""


class DataError(ValidationError):
    """Malformed dataset content (bad cell, missing column, ...)."""


class ModelFormatError(ValidationError):
    """Model file fails to validate (version, structure, unknown loss)."""


class NumericError(DistboostError):
    """Runtime numeric failure (zero denominator, non-finite loss, ...)."""


class TrainingError(NumericError):
    """Training aborted; carries the 1-based round index of the failure."""

    def __init__(self, message, round_index):
        super().__init__(message)
        self.round_index = round_index
