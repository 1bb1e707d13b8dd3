"""Exception types shared across the package."""

from __future__ import annotations


class RematchError(Exception):
    """Base class for all package-specific errors."""


class ParseError(RematchError):
    """A file or payload could not be parsed into the expected structure."""


class ValidationError(RematchError):
    """Parsed input violates a structural rule (duplicates, empty tables, ...)."""


class InconsistentNA(ParseError):
    """Exactly one side of a target pair is the NA sentinel."""


class UnknownAttribute(RematchError):
    """A mapping references a source attribute that does not exist."""


class UnknownTargetTable(RematchError):
    """A guidance pair names a table absent from the target schema."""


class DimensionMismatch(RematchError):
    """Two vectors of different dimensionality were compared."""


class ZeroVector(RematchError):
    """Cosine similarity was requested against an all-zero vector."""


class MissingEmbedding(RematchError):
    """A required document vector was not supplied."""


class MissingDocument(RematchError):
    """A required rendered document was not found in the corpus."""


class RemoteError(RematchError):
    """A remote backend call failed after the configured retries.

    Carries enough metadata for callers to log or surface the failure.
    """

    def __init__(self, message: str, *, status: int | None = None,
                 attempts: int = 1, retry_after: float | None = None):
        super().__init__(message)
        self.status = status
        self.attempts = attempts
        self.retry_after = retry_after


class Unparseable(ParseError):
    """No mapping object could be recovered from a model response."""


class ContextOverflow(RematchError):
    """A prompt exceeds the configured size budget and cannot be split further."""


class KTooLarge(RematchError):
    """An evaluation cutoff exceeds the prediction row width."""


class AmbiguousTruth(RematchError):
    """A source attribute carries more than one ground-truth target (1:n)."""


class InvalidRequest(RematchError):
    """A caller-supplied argument is outside the accepted range."""
