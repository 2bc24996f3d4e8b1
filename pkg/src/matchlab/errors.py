"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An input violates the documented precondition of an operation."""


class TruncationError(RuntimeError):
    """A spectral cutoff is too small for the requested time."""


class ConfigError(ValueError):
    """An experiment or event-check configuration cannot be honoured."""


class DomainError(ValueError):
    """A density is nonpositive where positivity is required."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location
