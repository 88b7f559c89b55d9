"""Error hierarchy.

Every error carries the process exit code the CLI reports for it:
2 for invalid input, 3 for numerical failure.
"""
from typing import Optional, Sequence


class SvyFosrError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DataValidationError(SvyFosrError):
    """Input data violates a dataset invariant."""

    exit_code = 2

    def __init__(self, message: str, rows: Optional[Sequence[int]] = None):
        self.rows = [int(r) for r in rows] if rows is not None else []
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:20])
            more = f" (+{len(self.rows) - 20} more)" if len(self.rows) > 20 else ""
            message = f"{message} [rows: {shown}{more}]"
        super().__init__(message)


class SchemaError(DataValidationError):
    """Required columns are missing from an input table."""


class GridMismatchError(DataValidationError):
    """Two functional objects are not defined on the same grid."""


class ConfigError(DataValidationError):
    """Invalid configuration key or value."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class ParameterError(SvyFosrError):
    """An argument is outside its admissible range."""

    exit_code = 2


class DesignError(SvyFosrError):
    """The survey design does not support the requested operation."""

    exit_code = 2

    def __init__(self, message: str, stratum: Optional[str] = None):
        self.stratum = stratum
        super().__init__(message)


class ProbabilityError(SvyFosrError):
    """Selection probabilities outside (0, 1]."""

    exit_code = 2


class SmootherSpecError(SvyFosrError):
    """Smoother settings incompatible with the grid."""

    exit_code = 2


class CapacityError(SvyFosrError):
    """Requested object does not fit in the configured memory cap."""

    exit_code = 2


class NumericalError(SvyFosrError):
    """Numerical failure during fitting or inference."""

    exit_code = 3


class SingularDesignError(NumericalError):
    """The weighted design matrix is rank deficient."""

    def __init__(self, message: str, column: Optional[str] = None):
        self.column = column
        super().__init__(message)


class InferenceError(NumericalError):
    """Too many replicate fits failed."""

    def __init__(self, message: str, failures: int = 0, total: int = 0):
        self.failures = failures
        self.total = total
        super().__init__(message)
