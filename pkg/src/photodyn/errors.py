"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes, so analysis code should
raise the most specific class that applies.
"""

__all__ = [
    "PhotodynError",
    "InvalidArgumentError",
    "FitFailedError",
    "AnalysisFailedError",
    "InsufficientDataError",
    "DataIOError",
]


class PhotodynError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(PhotodynError, ValueError):
    """Caller violated a documented precondition."""


class FitFailedError(PhotodynError):
    """An optimizer could not produce a usable estimate."""


class AnalysisFailedError(PhotodynError):
    """Input data did not support the requested analysis."""


class InsufficientDataError(AnalysisFailedError):
    """Too few events or samples to analyze at all."""


class DataIOError(PhotodynError, OSError):
    """Malformed or unreadable data file."""
