"""Custom exceptions for ppp_cpd"""
from typing import Optional


class PPPCDError(Exception):
    """Base exception for ppp_cpd"""
    pass


class ConfigurationError(PPPCDError):
    """Raised when configuration is invalid or missing"""
    pass


class DomainError(PPPCDError, ValueError):
    """Raised when a value falls outside its mathematical domain"""
    pass


class DimensionMismatchError(PPPCDError, ValueError):
    """Raised when point, index or matrix dimensions disagree"""
    pass


class NumericalError(PPPCDError, ArithmeticError):
    """Raised when a matrix carries non-finite entries"""
    pass


class InsufficientDataError(PPPCDError):
    """Raised when there are too few windows for the requested operation"""
    pass


class StreamOrderError(PPPCDError):
    """Raised when a window arrives out of order"""

    def __init__(self, message: str, expected: Optional[int] = None, received: Optional[int] = None):
        super().__init__(message)
        self.expected = expected
        self.received = received


class DetectorStateError(PPPCDError):
    """Raised when a detector is driven in the wrong state"""
    pass


class IntensityBoundError(PPPCDError):
    """Raised when an intensity exceeds its declared thinning bound"""
    pass


class IngestError(PPPCDError):
    """Raised when an event file cannot be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class ExperimentError(PPPCDError):
    """Raised when a Monte Carlo replication fails"""

    def __init__(self, message: str, replication: Optional[int] = None):
        super().__init__(message if replication is None else f"replication {replication}: {message}")
        self.replication = replication
