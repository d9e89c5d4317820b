"""Exception hierarchy shared across the pipeline."""


class GazesomError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(GazesomError, ValueError):
    """Input data failed validation (manifest, gaze CSV, config)."""


class FormatError(GazesomError, ValueError):
    """A file or response body does not follow its documented format."""


class ContractError(GazesomError):
    """A remote service answered with data that violates the interface contract."""


class ConfigError(GazesomError):
    """Configuration is incomplete or inconsistent. Raised before any work starts."""


class ToolMissingError(GazesomError):
    """A required external tool is missing from the host."""


class BackendError(GazesomError):
    """Inference request failed."""


class RetryableError(BackendError):
    """Transient failure (timeout, connection refused, 429/5xx)."""


class AuthError(BackendError):
    """Credential rejected; never retried."""


class RetriesExhausted(BackendError):
    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = list(attempts)
