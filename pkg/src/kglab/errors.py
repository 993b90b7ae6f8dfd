"""Exception types shared across the toolkit."""


class KglabError(Exception):
    """Base class for all library errors."""


class DataFormatError(KglabError):
    """A data file violates its expected format.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class UnknownIdError(KglabError, KeyError):
    """An entity or relation id is not part of the graph."""

    def __str__(self):
        return Exception.__str__(self)


class DimensionMismatchError(KglabError, ValueError):
    """Vector or matrix dimensions are inconsistent."""


class MissingKeyError(KglabError, KeyError):
    """A lookup key is absent from an embedding store."""

    def __str__(self):
        return Exception.__str__(self)


class TransportError(KglabError):
    """A remote request failed for good (non-retryable or retries exhausted)."""

    def __init__(self, message, status=None, retries=0):
        self.status = status
        self.retries = retries
        super().__init__(message)


class ConfigurationError(KglabError, ValueError):
    """A client or run configuration is invalid or incomplete."""


class TrainingDivergedError(KglabError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)
