"""Exception hierarchy shared by every mrrf module."""


class MRRFError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MRRFError, ValueError):
    """Operand shapes are incompatible."""


class InvalidArgumentError(MRRFError, ValueError):
    """An argument is outside the domain of the operation."""


class UnsupportedOperationError(MRRFError, ValueError):
    """A tape record was requested for an unknown primitive."""


class NumericError(MRRFError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class DataError(MRRFError):
    """A dataset, manifest, checkpoint or config could not be interpreted."""
