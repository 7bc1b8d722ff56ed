"""Exception types raised across the package."""


class SelmutError(Exception):
    """Base class for every error raised by selmut."""


class DomainError(SelmutError, ValueError):
    """Invalid spatial domain or grid request."""


class ModelError(SelmutError, ValueError):
    """Invalid growth, kernel or scenario specification."""


class ConvergenceError(SelmutError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DtTooLargeError(SelmutError, RuntimeError):
    """The implicit system at this time step is not an M-matrix."""


class PreconditionError(SelmutError, ValueError):
    """A diagnostic was asked for on data that does not satisfy its precondition."""


class ConfigError(SelmutError, ValueError):
    """Malformed scenario file or command-line override."""
