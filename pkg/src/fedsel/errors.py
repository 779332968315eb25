"""Exception types shared across the package."""

from __future__ import annotations


class FedselError(Exception):
    """Base class for all package errors."""


class DimensionError(FedselError):
    """Input shape disagrees with a model or ensemble contract."""


class DivergenceError(FedselError):
    """Training produced a non-finite loss or parameters."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class AggregationError(FedselError):
    """Models cannot be aggregated (mismatched architecture or empty set)."""


class WeightError(FedselError):
    """Aggregation weights violate the simplex contract."""


class ConfigError(FedselError):
    """A configuration value violates its contract.

    ``field_path`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message: str, field_path: str | None = None):
        super().__init__(message if field_path is None else f"{field_path}: {message}")
        self.field_path = field_path


class DataError(FedselError):
    """A dataset is empty or otherwise unusable."""


class CapabilityError(FedselError):
    """The requested computation exceeds a supported limit."""


class SchemaError(FedselError):
    """A CSV file does not match the expected column layout."""


class ParseError(FedselError):
    """A CSV cell could not be parsed; carries row/column context."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class AlignmentError(FedselError):
    """A client's modality files disagree on row count or labels."""


class StallError(FedselError):
    """A round produced zero uploads while the budget was unreached."""


class ComparabilityError(FedselError):
    """Experiment configs cannot be compared (different data or budget)."""
