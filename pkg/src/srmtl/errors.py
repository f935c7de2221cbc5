"""Exception hierarchy.

Two families map onto CLI exit codes: :class:`ValidationError` (bad input or
configuration, exit 1) and :class:`NumericalError` (a computation failed,
exit 2).
"""


class SrmtlError(Exception):
    """Base class for all package errors."""


class ValidationError(SrmtlError, ValueError):
    pass


class NumericalError(SrmtlError, ArithmeticError):
    pass


# dataio
class MissingFile(ValidationError, FileNotFoundError):
    pass


class SchemaViolation(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteSample(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


# signal
class InvalidBand(ValidationError):
    pass


class UnstableFilter(NumericalError):
    pass


class SampleRateMismatch(ValidationError):
    pass


# csp
class EmptyClass(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SingularCovariance(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


# mtl
class NonFinite(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NoProgress(NumericalError):
    pass


class EmptySelection(NumericalError):
    pass


# classify
class SingleClass(ValidationError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, gap=None, model=None):
        super().__init__(message)
        self.gap = gap
        self.model = model


class IndexOutOfRange(ValidationError, IndexError):
    pass


# pipeline
class ZeroVariance(ValidationError):
    pass
