"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class GradePipeError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(GradePipeError):
    """Input violates a structural invariant."""


class MissingFileError(ValidationError):
    """A manifest or roster entry points at a file that does not exist."""


class UnreadableImageError(ValidationError):
    """A referenced image file exists but cannot be decoded."""


class DuplicatePageIndexError(ValidationError):
    """Two manifest entries claim the same page index."""


class EmptyBundleError(ValidationError):
    """A bundle was loaded with zero pages."""


class AmbiguityError(ValidationError):
    """Detection produced conflicting results (e.g. duplicate question numbers)."""


class ConfigurationError(GradePipeError):
    """A required adapter or setting is not configured."""


class AdapterError(GradePipeError):
    """An external adapter process failed; carries its output."""

    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


class BackendError(GradePipeError):
    """Text-recognition backend failure. Retriable; carries diagnostics."""

    def __init__(self, message: str, diagnostics: str = "", retriable: bool = True):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.retriable = retriable


class ConflictError(GradePipeError):
    """A concurrent or double assignment was rejected."""


class StateError(GradePipeError):
    """Operation called in the wrong lifecycle state (e.g. grade without serve)."""


class NotFoundError(GradePipeError):
    """Referenced entity does not exist."""


class PreconditionError(GradePipeError):
    """A documented precondition does not hold."""


class AuthError(GradePipeError):
    """Missing or insufficient credentials.

    ``forbidden`` distinguishes a known identity lacking the role from
    missing/unknown credentials.
    """

    def __init__(self, message: str, forbidden: bool = False):
        super().__init__(message)
        self.forbidden = forbidden


class AnalyticsError(GradePipeError):
    """Statistics cannot be computed from the given event log."""
