"""Exception hierarchy.

Validation problems (bad inputs, bad config) derive from ``ValidationError``
and map to CLI exit code 1; numerical breakdowns derive from
``NumericalError`` and map to exit code 2.
"""


class CPFMError(Exception):
    pass


class ValidationError(CPFMError, ValueError):
    pass


class NumericalError(CPFMError, ArithmeticError):
    pass


class SingletonDataset(ValidationError):
    pass


class DegenerateBandwidth(ValidationError):
    pass


class NonpositiveBandwidth(ValidationError):
    pass


class MissingLabels(ValidationError):
    pass


class EmptyFingerprint(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class InsufficientNeighbors(ValidationError):
    pass


class InsufficientRuns(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None, column=None):
        where = ":".join(str(p) for p in (path, line, column) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
        self.column = column


class IndefiniteGram(NumericalError):
    pass


class PrecisionFailure(NumericalError):
    pass


class NoStableEpsilon(NumericalError):
    pass


class IoError(ValidationError, OSError):
    pass
