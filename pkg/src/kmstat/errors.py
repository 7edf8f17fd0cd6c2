"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` for bad input
(CLI exit code 2) and :class:`NumericalError` for numerical breakdowns
(CLI exit code 3).
"""


class KmstatError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(KmstatError, ValueError):
    pass


class NumericalError(KmstatError, ArithmeticError):
    pass


class EmptySample(ValidationError):
    pass


class NonPositiveTime(ValidationError):
    pass


class InvalidParameter(ValidationError):
    pass


class CsvFormatError(ValidationError):
    pass


class ModelNotSamplable(ValidationError):
    pass


class ModelNotContinuous(ValidationError):
    pass


class UnsortedGrid(ValidationError):
    pass


class RegimeMismatch(ValidationError):
    pass


class QuadratureFailure(NumericalError):
    pass


class DivergentIntegral(NumericalError):
    """An improper integral whose tail increments never settled.

    ``increments`` holds the tail sequence that was observed, as evidence.
    """

    def __init__(self, message, increments=()):
        super().__init__(message)
        self.increments = tuple(float(v) for v in increments)


class SingularSurvival(NumericalError):
    pass


class DegenerateWeightMass(NumericalError):
    pass


class NonConvergedEigensolve(NumericalError):
    pass
