"""
Exception hierarchy for the forecast e-value toolkit.

Input problems (bad files, bad settings, broken time order) derive from
`InputError` and map to CLI exit code 2. Numeric and domain problems derive
from `NumericError` and map to exit code 3.
"""


class EForecastError(Exception):
    """Base class for all errors raised by this package."""


class InputError(EForecastError, ValueError):
    """Invalid input data or configuration."""


class ParseError(InputError):
    """A single cell of an input table could not be accepted."""

    def __init__(self, row, column, reason):
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"Row {row}, column '{column}': {reason}")


class MissingColumnError(InputError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(
            f"Missing required columns: {', '.join(self.missing)}. Please check your input file."
        )


class OrderingError(InputError):
    """Time indices are not strictly increasing and contiguous."""


class ConfigError(InputError):
    """Invalid run settings."""


class NumericError(EForecastError, ArithmeticError):
    """A computation was asked for outside its mathematical domain."""


class ScoringDomainError(NumericError):
    pass


class DegenerateIntervalError(NumericError):
    pass


class ZeroMassError(NumericError):
    """The mixing measure puts no mass on the requested interval."""


class AlternativeInsideNullError(NumericError):
    pass


class LagMismatchError(NumericError):
    pass


class DegenerateVarianceError(NumericError):
    pass


class TooFewObservationsError(NumericError):
    pass
