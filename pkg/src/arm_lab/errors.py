"""Exception types shared across the package."""


class ArmLabError(Exception):
    """Base class for all package errors."""


class DomainError(ArmLabError, ValueError):
    """An argument lies outside the admissible domain of an operation."""


class PreconditionError(ArmLabError, ValueError):
    """A detector or estimator was called on an inadmissible configuration."""


class PrecisionError(ArmLabError, ValueError):
    """A requested discretization is too coarse to resolve the event."""


class InsufficientDataError(ArmLabError, ValueError):
    """Too few usable observations for a fit or a ratio."""


class ResourceError(ArmLabError, RuntimeError):
    """A memory or work budget was exceeded.

    Attributes
    ----------
    progress : str
        Human readable description of how far the computation got.
    """

    def __init__(self, message, progress=""):
        super().__init__(message if not progress else f"{message} ({progress})")
        self.progress = progress


class ConfigError(ArmLabError, ValueError):
    """Invalid experiment configuration."""
