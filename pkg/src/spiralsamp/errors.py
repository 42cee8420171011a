"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` means the inputs were
rejected before any heavy computation started, ``NumericalError`` means a
computed quantity failed a check it was supposed to satisfy. The CLI maps
them to exit codes 2 and 3.
"""


class SpiralSampError(Exception):
    """Base class for all package errors."""

    #: short machine-readable tag used in CLI diagnostics
    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class ValidationError(SpiralSampError, ValueError):
    code = "validation"


class ParameterDomainError(ValidationError):
    code = "parameter-domain"


class NormalizationError(ValidationError):
    code = "normalization"


class InsufficientWindowError(ValidationError):
    code = "insufficient-window"


class EmptyWindowError(ValidationError):
    code = "empty-window"


class ClassificationWindowError(ValidationError):
    code = "classification-window"


class AlignmentError(ValidationError):
    code = "alignment"


class ResolutionError(ValidationError):
    code = "resolution"


class PaddingError(ValidationError):
    code = "padding"


class EnlargeGridError(ValidationError):
    code = "enlarge-grid"


class TruncationError(ValidationError):
    code = "truncation"


class UnderdeterminedError(ValidationError):
    code = "underdetermined"


class UndefinedRatioError(ValidationError):
    code = "undefined-ratio"


class NumericalError(SpiralSampError, ArithmeticError):
    code = "numerical"


class ConstantViolationError(NumericalError):
    code = "constant-violation"


class ConvergenceError(NumericalError):
    code = "convergence"


class AccuracyWarning(UserWarning):
    """Emitted when an evaluation leaves its accuracy regime (not fatal)."""
