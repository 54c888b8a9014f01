"""Exception hierarchy shared by the library and the command-line tool."""


class MfaError(Exception):
    """Base class for all errors raised by mfalign."""

    exit_code = 1


class FormatError(MfaError):
    """Malformed input file (embeddings, dictionaries, model containers)."""

    exit_code = 2


class ShapeError(MfaError, ValueError):
    exit_code = 3


class ParameterError(MfaError, ValueError):
    exit_code = 3


class InsufficientDataError(MfaError, ValueError):
    """Too few observations, or nothing left after vocabulary filtering."""

    exit_code = 3


class NumericalError(MfaError, ArithmeticError):
    exit_code = 4


class DegenerateInputError(NumericalError):
    pass


class DegenerateCovarianceError(NumericalError):
    pass


class UndefinedCorrelationError(NumericalError):
    pass


class InternalError(MfaError, RuntimeError):
    """An invariant the algorithms guarantee was violated."""

    exit_code = 5
