"""Exception types shared across the package.

``ValidationError`` and its subclasses mark bad inputs or configuration
(the CLI maps them to exit code 1); everything else under ``BessbenchError``
is a runtime failure (exit code 2).
"""


class BessbenchError(Exception):
    """Base class for all package errors."""


class ValidationError(BessbenchError):
    """Invalid input data, parameters, or configuration."""


class DataAlignmentError(ValidationError):
    """Time series is not strictly hourly (gap or duplicate timestamp)."""


class CsvParseError(ValidationError):
    """Malformed CSV row; message names the offending line."""


class InsufficientHistoryError(ValidationError):
    """Not enough history to fit or apply a forecaster."""


class LatticeAlignmentError(ValidationError):
    """SOC value does not sit on the charge-rate lattice."""


class SeriesExhaustedError(BessbenchError):
    """Stepped past the end of the exogenous series."""


class InvalidActionError(BessbenchError):
    """Policy emitted an action outside the permitted rate bound."""


class NotFittedError(BessbenchError):
    """Model used before fitting."""


class NumericError(BessbenchError):
    """NaN or non-finite value where a finite number is required."""
