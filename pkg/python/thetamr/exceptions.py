"""Exception classes for thetamr."""

from typing import Optional


class ThetaMRError(Exception):
    """Base exception for all thetamr errors."""

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage


class SchemaError(ThetaMRError):
    """Raised when a relation header or schema is malformed."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message, "load")
        self.path = path


class RowError(ThetaMRError):
    """Raised when a data row does not conform to its schema."""

    def __init__(self, message: str, row: int, path: Optional[str] = None):
        super().__init__(f"row {row}: {message}", "load")
        self.row = row
        self.path = path


class EmptyRelationError(ThetaMRError):
    """Raised when a relation file holds a header but no tuples."""

    def __init__(self, name: str, path: Optional[str] = None):
        super().__init__(f"Relation '{name}' has no tuples", "load")
        self.name = name
        self.path = path


class QueryError(ThetaMRError):
    """Raised when a query text is invalid."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, "parse")
        self.line = line


class ConnectivityError(QueryError):
    """Raised when the join graph of a query is not connected."""

    pass


class EstimationError(ThetaMRError):
    """Raised when selectivity estimation cannot proceed."""

    def __init__(self, message: str):
        super().__init__(message, "statistics")


class PartitionError(ThetaMRError):
    """Raised for invalid cube configurations or component counts."""

    def __init__(self, message: str):
        super().__init__(message, "partition")


class PlanningError(ThetaMRError):
    """Raised when planner parameters are invalid or no plan exists."""

    def __init__(self, message: str):
        super().__init__(message, "plan")


class PlanConsistencyError(ThetaMRError):
    """Raised when an executed plan violates one of its own invariants."""

    def __init__(self, message: str):
        super().__init__(message, "run")


class OracleGuardError(ThetaMRError):
    """Raised when the brute-force oracle would enumerate too many combinations."""

    def __init__(self, combinations: int, limit: int):
        super().__init__(
            f"Cross product of {combinations} combinations exceeds the oracle "
            f"guard of {limit}",
            "oracle",
        )
        self.combinations = combinations
        self.limit = limit


class ConfigurationError(ThetaMRError):
    """Raised when configuration is invalid."""

    pass


class CalibrationError(ThetaMRError):
    """Raised when a calibration benchmark fails."""

    def __init__(self, message: str):
        super().__init__(message, "calibrate")


class TimerResolutionError(CalibrationError):
    """Raised when a benchmark finishes below the timer's resolution."""

    pass


class StatsCacheError(ThetaMRError):
    """Raised when a statistics sidecar cannot be used."""

    def __init__(self, message: str):
        super().__init__(message, "statistics")
