"""Exception hierarchy shared by every module."""


class IfcompError(Exception):
    """Base class for all package errors."""


class DimensionError(IfcompError, ValueError):
    pass


class NumericalError(IfcompError, ArithmeticError):
    """Raised when an iterative kernel fails to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(IfcompError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class OracleFailure(IfcompError, ArithmeticError):
    pass


class ConfigurationError(IfcompError, ValueError):
    pass


class FormatError(IfcompError, ValueError):
    pass
