"""Exception types shared across the package."""


class DetoxError(Exception):
    """Base class for package errors."""


class SchemaError(DetoxError):
    """Input file does not match its declared reader spec."""


class EmptySourceError(DetoxError):
    """A source file yielded zero parsable rows."""


class PolicyError(DetoxError):
    """A post's source has no entry in the label policy."""


class ConfigError(DetoxError):
    """Bad or missing configuration value / file."""


class TransportError(DetoxError):
    """Retry attempts exhausted against the chat backend."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class RequestError(DetoxError):
    """Non-retryable request failure (e.g. 4xx, missing credential)."""


class ProtocolError(DetoxError):
    """Backend returned a payload we cannot interpret."""


class TransientError(DetoxError):
    """Internal: a retryable backend failure (timeout, 429, 5xx)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MockScriptError(ProtocolError):
    """The scripted mock has no rule for a request."""


class VerdictParseError(DetoxError):
    """A single verdict completion could not be parsed."""


class VerdictError(DetoxError):
    """Verdict unparseable even after the one allowed re-ask."""


class ServiceError(DetoxError):
    """Scorer service unreachable or returned a bad payload."""


class GateError(DetoxError):
    """Gate evaluated on a record missing required verdicts/scores."""


class ResumeError(DetoxError):
    """Checkpoint directory belongs to a run with a different config hash."""


class RunAborted(DetoxError):
    """Pipeline run aborted on an unrecoverable backend failure; checkpoints flushed."""
