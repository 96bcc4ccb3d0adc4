"""Exception types raised across the package."""


class LaplacianLoraError(Exception):
    """Base class for every error raised by laplora."""


class ShapeError(LaplacianLoraError, ValueError):
    pass


class DomainError(LaplacianLoraError, ValueError):
    pass


class ParameterError(LaplacianLoraError, ValueError):
    pass


class DataError(LaplacianLoraError, ValueError):
    pass


class FormatError(DataError):
    """A file on disk does not follow its documented layout."""


class ConsistencyError(DataError):
    """Files of one dataset container disagree with each other."""


class ValidationError(DataError):
    pass


class StaleCacheError(LaplacianLoraError):
    """A cache was built for a different graph than the one in use."""


class ConvergenceError(LaplacianLoraError, RuntimeError):
    def __init__(self, message, worst_residual=float("nan")):
        super().__init__(message)
        self.worst_residual = worst_residual


class ContractError(LaplacianLoraError, RuntimeError):
    """An operation was called in a state its contract does not allow."""
