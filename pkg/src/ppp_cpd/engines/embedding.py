"""
Intensity-matrix embedding of point windows.

A window X is mapped to the M^p x M^q matrix with entries
sum_{x in X} Phi_mu(y) Psi_eta(z), where (y, z) is the coordinate split of
x. By Campbell's theorem its mean is the population matrix
integral lambda(y, z) Phi_mu(y) Psi_eta(z) dy dz, which is evaluated here by
tensor Gauss-Legendre quadrature (tests and calibration only, never on the
streaming path).
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..core.errors import DimensionMismatchError, DomainError
from ..domain.models import CoordinateSplit, PointWindow
from .legendre import gauss_legendre, tensor_table, univariate_table

logger = structlog.get_logger(__name__)

# intensity handle: (n, d) array of points -> (n,) array of nonnegative values
Intensity = Callable[[np.ndarray], np.ndarray]

DEFAULT_QUAD_ORDER = 32


def embed_points(points: np.ndarray, split: CoordinateSplit, M: int) -> np.ndarray:
    """Intensity matrix of a raw ``(n, d)`` point array"""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != split.dim:
        raise DimensionMismatchError(
            f"points must have {split.dim} coordinates, got shape {points.shape}"
        )
    if points.shape[0] == 0:
        return np.zeros((M ** split.p, M ** split.q))
    phi = tensor_table(points[:, list(split.group_y)], M)
    psi = tensor_table(points[:, list(split.group_z)], M)
    return phi @ psi.T


def embed_window(window: PointWindow, split: CoordinateSplit, M: int) -> np.ndarray:
    """Empirical intensity matrix of one window; empty windows map to zero"""
    if M < 1:
        raise DomainError(f"basis size must be >= 1, got {M}")
    return embed_points(window.points, split, M)


def embed_window_1d(window: PointWindow, M: int) -> np.ndarray:
    """Empirical coefficient vector sum_{x in X} phi_mu(x) of a 1D window"""
    if window.dim != 1:
        raise DimensionMismatchError(f"1D embedding needs 1 coordinate, got {window.dim}")
    if window.size == 0:
        return np.zeros(M)
    return univariate_table(M, window.points[:, 0]).sum(axis=1)


def quadrature_grid(dim: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre grid on [0,1]^dim as (points, weights)"""
    if order < 2:
        raise DomainError(f"quadrature order must be >= 2, got {order}")
    nodes, weights = gauss_legendre(order)
    mesh = np.meshgrid(*([nodes] * dim), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([weights] * dim), indexing="ij")
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    return points, w


def _evaluate(intensity: Intensity, points: np.ndarray) -> np.ndarray:
    values = np.asarray(intensity(points), dtype=float).reshape(-1)
    if values.shape[0] != points.shape[0]:
        raise DimensionMismatchError("intensity must return one value per point")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise DomainError("intensity must be nonnegative and finite on the domain")
    return values


def population_matrix(intensity: Intensity, split: CoordinateSplit, M: int,
                      quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Matrix of basis coefficients of a known intensity"""
    points, weights = quadrature_grid(split.dim, quad_order)
    weighted = _evaluate(intensity, points) * weights
    phi = tensor_table(points[:, list(split.group_y)], M)
    psi = tensor_table(points[:, list(split.group_z)], M)
    return (phi * weighted) @ psi.T


def population_vector_1d(intensity: Intensity, M: int,
                         quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    points, weights = quadrature_grid(1, quad_order)
    weighted = _evaluate(intensity, points) * weights
    return univariate_table(M, points[:, 0]) @ weighted


def approximation_error(intensity: Intensity, dim: int, M: int,
                        quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """L2 distance between an intensity and its M-term tensor expansion.

    Uses Parseval: ||lambda - lambda_M||^2 = ||lambda||^2 - ||coefficients||^2.
    """
    points, weights = quadrature_grid(dim, quad_order)
    values = _evaluate(intensity, points)
    norm_sq = float(np.sum(values ** 2 * weights))
    coefficients = tensor_table(points, M) @ (values * weights)
    return float(np.sqrt(max(norm_sq - float(coefficients @ coefficients), 0.0)))


def intensity_distance(first: Intensity, second: Intensity, dim: int,
                       quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """kappa = ||first - second||_L2 over [0,1]^dim"""
    points, weights = quadrature_grid(dim, quad_order)
    diff = _evaluate(first, points) - _evaluate(second, points)
    return float(np.sqrt(np.sum(diff ** 2 * weights)))


def integrate(intensity: Intensity, dim: int, quad_order: int = DEFAULT_QUAD_ORDER,
              box: Optional[Sequence[Tuple[float, float]]] = None) -> float:
    """Expected point count of an intensity over a box (default the unit cube)"""
    points, weights = quadrature_grid(dim, quad_order)
    if box is None:
        return float(np.sum(_evaluate(intensity, points) * weights))
    lows = np.array([b[0] for b in box], dtype=float)
    highs = np.array([b[1] for b in box], dtype=float)
    scaled = lows + points * (highs - lows)
    return float(np.sum(_evaluate(intensity, scaled) * weights) * np.prod(highs - lows))


@dataclass(frozen=True)
class RescaleStats:
    """Per-coordinate (min, max) frozen from training data"""
    mins: Tuple[float, ...]
    maxs: Tuple[float, ...]

    def __post_init__(self):
        if len(self.mins) != len(self.maxs):
            raise DimensionMismatchError("mins and maxs must have the same length")
        for j, (low, high) in enumerate(zip(self.mins, self.maxs)):
            if not high > low:
                raise DomainError(f"degenerate range for coordinate {j}: min={low}, max={high}")

    @property
    def dim(self) -> int:
        return len(self.mins)

    def to_dict(self) -> dict:
        return {"mins": list(self.mins), "maxs": list(self.maxs)}


def fit_rescale(raw_points: np.ndarray) -> RescaleStats:
    """Training min/max per coordinate"""
    raw_points = np.asarray(raw_points, dtype=float)
    if raw_points.ndim != 2 or raw_points.shape[0] == 0:
        raise DomainError("rescale statistics need at least one training point")
    return RescaleStats(
        mins=tuple(float(v) for v in raw_points.min(axis=0)),
        maxs=tuple(float(v) for v in raw_points.max(axis=0)),
    )


def rescale_events(raw_points: np.ndarray, stats: RescaleStats) -> np.ndarray:
    """Affine map into [0,1]^d with clamping of out-of-range values"""
    raw_points = np.asarray(raw_points, dtype=float)
    if raw_points.ndim == 1:
        raw_points = raw_points.reshape(-1, stats.dim)
    if raw_points.shape[1] != stats.dim:
        raise DimensionMismatchError(
            f"expected {stats.dim} coordinates, got {raw_points.shape[1]}"
        )
    mins = np.asarray(stats.mins)
    spans = np.asarray(stats.maxs) - mins
    return np.clip((raw_points - mins) / spans, 0.0, 1.0)

