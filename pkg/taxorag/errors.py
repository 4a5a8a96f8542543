"""
Exception types raised by ``taxorag``.

Every error raised deliberately by this package derives from
:py:class:`TaxoragError` so callers (and the command line front end) can tell
pipeline failures apart from programming errors.
"""

__all__ = [
    "TaxoragError",
    "TaxonomyError",
    "ConflictingParent",
    "EmptyInput",
    "RaggedRow",
    "UnknownLabel",
    "LevelOutOfRange",
    "EmbeddingError",
    "EmptyText",
    "DimMismatch",
    "ZeroVector",
    "IndexNotBuilt",
    "ProviderError",
    "ProviderExhausted",
    "AuthError",
    "MalformedResponse",
    "NoCandidates",
    "EvaluationError",
    "LengthMismatch",
    "MissingLog",
    "DivisionByZero",
    "ConfigError",
    "ParseError",
    "DatasetMismatch",
    "RunAborted",
]


class TaxoragError(Exception):
    """Base class of all errors raised by ``taxorag``."""


class TaxonomyError(TaxoragError):
    """The label taxonomy is malformed or was queried incorrectly."""


class ConflictingParent(TaxonomyError):
    """A label name at some level was observed under two different parents."""


class EmptyInput(TaxonomyError):
    """No taxonomy rows were supplied."""


class RaggedRow(TaxonomyError):
    """A taxonomy row has the wrong number of (non-empty) entries."""


class UnknownLabel(TaxonomyError):
    """A label does not belong to the taxonomy or label space in question."""


class LevelOutOfRange(TaxonomyError):
    """A level index outside ``1..depth`` was requested."""


class EmbeddingError(TaxoragError):
    """Embedding computation or vector arithmetic failed."""


class EmptyText(EmbeddingError):
    """An empty (or whitespace only) string was given to an embedder."""


class DimMismatch(EmbeddingError):
    """Two vectors of different dimensionality were compared."""


class ZeroVector(EmbeddingError):
    """The cosine of an all-zero vector is undefined."""


class IndexNotBuilt(EmbeddingError):
    """The label index holds no vectors for the requested level."""


class ProviderError(TaxoragError):
    """
    A remote (or mock) provider failed.

    Parameters
    ----------
    message : str
    retries : int
        Number of retries performed before giving up.
    status : int or None
        HTTP status code of the last failed attempt, if known.
    """

    def __init__(self, message, retries=0, status=None):
        super().__init__(message)
        self.retries = retries
        self.status = status


class ProviderExhausted(ProviderError):
    """Transient failures persisted after every permitted retry."""


class AuthError(ProviderError):
    """The provider rejected the configured credentials."""


class MalformedResponse(ProviderError):
    """The provider answered with something that is not a usable result."""


class NoCandidates(TaxoragError):
    """A classification prompt was requested with no candidate labels."""


class EvaluationError(TaxoragError):
    """Metrics could not be computed from the given inputs."""


class LengthMismatch(EvaluationError):
    """Gold and predicted label sequences differ in length."""


class MissingLog(EvaluationError):
    """A document has no logged retrieval candidates for a level."""


class DivisionByZero(EvaluationError, ZeroDivisionError):
    """A decay rate was requested relative to a level with an F1 of zero."""


class ConfigError(TaxoragError):
    """The run configuration is invalid."""


class ParseError(TaxoragError):
    """
    A dataset or taxonomy file could not be parsed.

    Parameters
    ----------
    message : str
    line : int or None
        The 1-based line number of the offending record, if known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


class DatasetMismatch(TaxoragError):
    """Two reports being compared do not describe the same dataset."""


class RunAborted(TaxoragError):
    """Too many documents failed at the provider for the run to continue."""

    def __init__(self, failed, total, threshold):
        super().__init__(
            "{} of {} documents failed at the provider (threshold {:.0%})".format(
                failed, total, threshold))
        self.failed = failed
        self.total = total
        self.threshold = threshold
