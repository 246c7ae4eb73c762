"""Exception hierarchy shared by all vshift modules."""


class VShiftError(Exception):
    """Base class for library errors."""


class DataError(VShiftError):
    """Input data is malformed, inconsistent, or insufficient."""


class ParseError(DataError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SchemaError(DataError):
    pass


class DimensionError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DomainError(DataError):
    """A value lies outside the support an analytic formula assumes."""


class NumericalError(VShiftError):
    """A linear solve failed or produced a degenerate result."""
