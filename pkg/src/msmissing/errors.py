"""Exception hierarchy shared by every module of the package."""


class MSMError(Exception):
    """Base class for all package errors."""


# numerics
class DimensionMismatch(MSMError, ValueError):
    pass


class SingularDesign(MSMError):
    pass


class NonConvergence(MSMError):
    pass


class Separation(MSMError):
    pass


class NotConverged(MSMError):
    pass


# data
class ParseError(MSMError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class SchemaError(MSMError, ValueError):
    pass


class ValidationError(MSMError, ValueError):
    pass


# msm
class EmptyRiskSet(MSMError):
    pass


# missing-data strategies
class InsufficientCompleteCases(MSMError):
    pass


class MissingBaseline(MSMError):
    pass


class FailedImputation(MSMError):
    pass


class MTooSmall(MSMError, ValueError):
    pass


class SparsePattern(MSMError):
    pass


class MethodNotApplicable(MSMError):
    """Raised when a strategy cannot be used on the supplied data at all."""


# dgp
class MechanismMismatch(MSMError):
    pass


class CalibrationFailed(MSMError):
    pass


# harness
class TooFewReplications(MSMError, ValueError):
    pass


class TooManyFailures(MSMError):
    pass


# cli
class ConfigError(MSMError, ValueError):
    def __init__(self, message, key=None, path=None):
        where = " ".join(x for x in (f"[{path}]" if path else "", f"key {key!r}" if key else "") if x)
        super().__init__(f"{where}: {message}" if where else message)
        self.key = key
        self.path = path
