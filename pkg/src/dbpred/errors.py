"""Exception hierarchy shared by all dbpred modules."""


class DbpError(Exception):
    """Base class for every error raised by dbpred."""


# structure_io
class ParseError(DbpError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ChainNotFound(DbpError, KeyError):
    pass


class ManifestError(DbpError, ValueError):
    pass


class IdError(DbpError, ValueError):
    pass


class FetchError(DbpError, IOError):
    pass


# electrostatics
class ChargeTableMiss(DbpError, KeyError):
    pass


class ChargeTableError(DbpError, ValueError):
    """A charge table violates the formal-charge-sum invariant."""


class GridTooSmall(DbpError, ValueError):
    pass


class NonFiniteDivergence(DbpError, ArithmeticError):
    pass


class OutOfGrid(DbpError, ValueError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class SingularPoint(DbpError, ValueError):
    pass


# surface
class ReferenceMiss(DbpError, KeyError):
    pass


# features
class EmptyProtein(DbpError, ValueError):
    pass


class KeyMismatch(DbpError, ValueError):
    pass


class SchemaError(DbpError, ValueError):
    pass


class InsufficientData(DbpError, ValueError):
    pass


# learners / evaluation
class DimensionError(DbpError, ValueError):
    pass


class SingleClassError(DbpError, ValueError):
    pass


class EmptyEvaluation(DbpError, ValueError):
    pass


class EvaluationImpossible(DbpError, ValueError):
    pass


class ModelFormatError(DbpError, ValueError):
    pass
