"""Exception hierarchy shared across the toolkit."""


class OmpForgeError(Exception):
    """Base class for all toolkit errors."""


class MalformedPragma(OmpForgeError):
    """Pragma text that cannot be parsed (missing prefix, unbalanced
    parentheses, or an empty item name)."""


class UnknownClause(OmpForgeError):
    """A clause name that is not in the OpenMP keyword table."""


class EmptyCorpus(OmpForgeError):
    """An operation that requires a non-empty corpus received none."""


class BackendUnavailable(OmpForgeError):
    """The completion backend could not serve the request (network error,
    timeout, or a non-2xx response; the response body is surfaced when
    available)."""


class NotTrained(OmpForgeError):
    """The n-gram model was used before training or loading."""


class NoLogprobSupport(OmpForgeError):
    """The backend cannot supply token log-probabilities."""


class ChainStalled(OmpForgeError):
    """The chain loop retained the same component for every stage up to the
    stage limit without reaching end-of-pragma."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ScriptedExhausted(OmpForgeError):
    """The scripted backend ran out of queued replies."""


class ModelFormatError(OmpForgeError):
    """Base class for model (de)serialization failures."""


class BadMagic(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class VersionMismatch(ModelFormatError):
    """Model file uses an unsupported format version."""


class CorruptPayload(ModelFormatError):
    """Model file is truncated or internally inconsistent."""
