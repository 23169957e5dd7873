"""Exception types shared across the package."""


class DcoError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DcoError, ValueError):
    pass


class InvalidConfig(DcoError, ValueError):
    pass


class NumericalFailure(DcoError, ArithmeticError):
    pass


class EmptyDataset(DcoError, ValueError):
    pass


class IncompatibleModel(DcoError, ValueError):
    pass


class SearchDiverged(NumericalFailure):
    """Raised when the architecture search blows up; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
