class LabError(Exception):
    """Base class for every failure the lab reports through an exit code."""

    exit_code = 1

    def __init__(self, message: str, details=None):
        super().__init__(message)
        self.message = message
        self.details = details


class ConfigError(LabError):
    exit_code = 2


class DataError(LabError):
    exit_code = 3


class NumericError(LabError):
    exit_code = 4


class ShapeError(NumericError, ValueError):
    """Incompatible tensor shapes."""


class DomainError(NumericError, ValueError):
    """Operation applied outside its mathematical domain (log of x <= 0, bad index)."""
