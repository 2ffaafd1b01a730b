"""Exception hierarchy shared across the package."""


class GradCodeError(Exception):
    """Base class for all package errors."""


class ParameterError(GradCodeError, ValueError):
    """Invalid code, model or problem parameters."""


class InputError(GradCodeError, ValueError):
    """Malformed arguments to an otherwise valid operation."""


class DomainError(GradCodeError, ValueError):
    """Arguments outside the region where a formula is defined."""


class DataError(GradCodeError, ValueError):
    """Dataset contents violate an objective's requirements."""


class ConfigError(GradCodeError, ValueError):
    """Experiment configuration is missing a key or fails validation."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ProtocolError(GradCodeError):
    """Malformed or unexpected frame on the wire."""
