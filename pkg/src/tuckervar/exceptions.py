"""Exception hierarchy shared by every module."""


class TuckerVarError(Exception):
    """Base class for all package errors."""


class ShapeError(TuckerVarError, ValueError):
    pass


class ParameterError(TuckerVarError, ValueError):
    pass


class ValidationError(TuckerVarError, ValueError):
    pass


class InsufficientDataError(TuckerVarError, ValueError):
    pass


class SelectionError(TuckerVarError, RuntimeError):
    pass


class DivergenceError(TuckerVarError, RuntimeError):
    """Raised when the solver objective blows up or turns non-finite."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"fit diverged at iteration {iteration}")
