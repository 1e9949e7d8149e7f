"""Exception hierarchy shared by every cdte module."""


class CDTEError(Exception):
    """Base class for all errors raised by cdte."""


class SchemaError(CDTEError):
    pass


class ParseError(CDTEError):
    pass


class ValidationError(CDTEError):
    pass


class ConfigurationError(CDTEError):
    pass


class DegenerateSplitError(CDTEError):
    pass


class DomainError(CDTEError, ValueError):
    pass


class SingularDesignError(CDTEError):
    pass


class PreconditionError(CDTEError):
    pass


class NuisanceError(CDTEError):
    """A nuisance fit or evaluation failed; carries the fold it happened in."""

    def __init__(self, message, fold=None, nuisance=None):
        super().__init__(message)
        self.fold = fold
        self.nuisance = nuisance


class NumericalError(CDTEError):
    """An iterative solver did not converge. ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
