"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, file
problems exit 3 and inference-service failures exit 4.
"""


class CureError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CureError, ValueError):
    """Input violates a documented precondition or invariant."""


class ShapeError(ValidationError):
    """Array dimensions do not line up."""


class CheckpointError(ValidationError):
    """Checkpoint file is malformed, truncated or of an unsupported version."""


class UndefinedCorrelationError(ValidationError):
    """Rank correlation is undefined (e.g. one list is entirely tied)."""


class DegenerateBaselineError(ValidationError):
    """Base success rate is 1, so the random and perfect curves coincide."""


class ParseError(ValidationError):
    """An LLM response could not be converted into the requested value."""


class LLMError(CureError):
    """Failure talking to the chat-completions service."""


class LLMNetworkError(LLMError):
    """Transport or server failure that survived every retry."""


class LLMRequestError(LLMError):
    """The service rejected the request with a 4xx status; never retried."""


class LLMCredentialError(LLMRequestError):
    """401/403: the API key is missing or not accepted."""


class LLMResponseError(LLMError):
    """The service answered, but not with a usable completion payload."""
