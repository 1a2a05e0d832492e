"""Exception hierarchy shared by all modules."""


class RobustSemigroupError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RobustSemigroupError, ValueError):
    """An argument lies outside the domain of the operation (negative time, p <= 1, ...)."""


class ModelError(RobustSemigroupError, ValueError):
    """A Levy model or penalty is malformed (non-PSD covariance, negative intensity, ...)."""


class ConfigurationError(RobustSemigroupError, ValueError):
    """The numerical setup cannot deliver the requested accuracy (mass leak, CFL, ...)."""


class ResourceError(RobustSemigroupError, MemoryError):
    """The requested problem is larger than the documented size limits."""
