"""Validators shared by the domain models and engines"""
import numpy as np

from ..core.errors import DomainError, NumericalError

UNIT_TOLERANCE = 1e-12


def check_unit_cube(values: np.ndarray, tol: float = UNIT_TOLERANCE) -> None:
    """Raise DomainError when any value lies outside [0, 1] by more than tol"""
    if values.size == 0:
        return
    if not np.all(np.isfinite(values)):
        raise DomainError("coordinates must be finite")
    low = float(np.min(values))
    high = float(np.max(values))
    if low < -tol or high > 1.0 + tol:
        raise DomainError(f"coordinates must lie in [0, 1], got range [{low}, {high}]")


def check_finite(matrix: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(matrix)):
        raise NumericalError(f"{name} has non-finite entries")
