"""
Orthonormal shifted Legendre basis on [0, 1] and its tensor products.

phi_k(x) = sqrt(2k - 1) * P_{k-1}(2x - 1), k >= 1, so phi_1 is the constant
function and the integral of phi_k over [0, 1] is delta_{k1}.

Multi-indices over a coordinate group of size g are flattened
lexicographically with the first coordinate varying fastest:
flat = sum_j (e_j - 1) * M**j + 1 (1-based).
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import special

from ..core.errors import DimensionMismatchError, DomainError
from ..domain.validate import UNIT_TOLERANCE

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class MultiIndex:
    """Tensor-product basis index, one entry >= 1 per coordinate of a group"""
    entries: Tuple[int, ...]

    def __post_init__(self):
        if not self.entries:
            raise DomainError("a multi-index needs at least one entry")
        if any(int(e) < 1 for e in self.entries):
            raise DomainError(f"multi-index entries must be >= 1, got {self.entries}")

    @property
    def group_size(self) -> int:
        return len(self.entries)


def _check_domain(x: np.ndarray) -> np.ndarray:
    if x.size and (np.min(x) < -UNIT_TOLERANCE or np.max(x) > 1.0 + UNIT_TOLERANCE):
        raise DomainError(f"Legendre basis is defined on [0, 1], got values in [{np.min(x)}, {np.max(x)}]")
    return np.clip(x, 0.0, 1.0)


def univariate_table(max_k: int, x: ArrayLike) -> np.ndarray:
    """Evaluate phi_1..phi_max_k at x.

    Returns an array of shape ``(max_k,) + np.shape(x)`` built with the
    Bonnet recurrence (n+1) P_{n+1} = (2n+1) t P_n - n P_{n-1}, t = 2x - 1.
    """
    if max_k < 1:
        raise DomainError(f"basis index must be >= 1, got {max_k}")
    x = _check_domain(np.asarray(x, dtype=float))
    t = 2.0 * x - 1.0
    table = np.empty((max_k,) + t.shape)
    table[0] = 1.0
    if max_k > 1:
        table[1] = t
    for n in range(1, max_k - 1):
        table[n + 1] = ((2 * n + 1) * t * table[n] - n * table[n - 1]) / (n + 1)
    norms = np.sqrt(2.0 * np.arange(1, max_k + 1) - 1.0)
    return table * norms.reshape((-1,) + (1,) * t.ndim)


def eval_univariate(k: int, x: ArrayLike) -> ArrayLike:
    """phi_k(x) for a basis index k >= 1 and x in [0, 1]"""
    if k < 1:
        raise DomainError(f"basis index must be >= 1, got {k}")
    value = univariate_table(k, x)[k - 1]
    return float(value) if np.ndim(value) == 0 else value


def eval_tensor(idx: MultiIndex, point) -> float:
    """Product of phi_{idx_j}(point_j) over the coordinates of a group"""
    point = np.asarray(point, dtype=float).ravel()
    if point.size != idx.group_size:
        raise DimensionMismatchError(
            f"multi-index has {idx.group_size} entries but point has {point.size} coordinates"
        )
    value = 1.0
    for k, x in zip(idx.entries, point):
        value *= eval_univariate(int(k), float(x))
    return value


def flatten(idx: MultiIndex, M: int) -> int:
    """1-based flat position of a multi-index, first coordinate fastest"""
    if any(e > M for e in idx.entries):
        raise DomainError(f"multi-index {idx.entries} exceeds basis size {M}")
    flat = 0
    for j, e in enumerate(idx.entries):
        flat += (int(e) - 1) * M ** j
    return flat + 1


def unflatten(flat: int, M: int, group_size: int) -> MultiIndex:
    """Inverse of flatten"""
    if not 1 <= flat <= M ** group_size:
        raise DomainError(f"flat index {flat} outside [1, {M ** group_size}]")
    rest = flat - 1
    entries = []
    for _ in range(group_size):
        rest, digit = divmod(rest, M)
        entries.append(digit + 1)
    return MultiIndex(tuple(entries))


@lru_cache(maxsize=64)
def max_entries(M: int, group_size: int) -> np.ndarray:
    """Largest multi-index entry at every flat position (0-based array)"""
    grids = np.meshgrid(*([np.arange(1, M + 1)] * group_size), indexing="ij")
    # reverse axes so that the first coordinate varies fastest after ravel()
    stacked = np.stack([g.transpose(tuple(range(group_size))[::-1]) for g in grids])
    result = stacked.max(axis=0).ravel()
    result.setflags(write=False)
    return result


def tensor_table(coords: np.ndarray, M: int) -> np.ndarray:
    """Evaluate every tensor-product basis function at every point.

    Parameters
    ----------
    coords : ndarray, shape (n, g)
        Points restricted to one coordinate group.
    M : int
        Univariate basis size.

    Returns
    -------
    ndarray, shape (M**g, n)
        Row ``flat - 1`` holds Phi_flat at each point.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2:
        raise DimensionMismatchError(f"coords must be (n, g), got shape {coords.shape}")
    n, g = coords.shape
    table = np.ones((1, n))
    for j in range(g):
        uni = univariate_table(M, coords[:, j])
        # new coordinate becomes the slowest-varying digit
        table = (uni[:, None, :] * table[None, :, :]).reshape(-1, n)
    return table


@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]"""
    if order < 1:
        raise DomainError(f"quadrature order must be >= 1, got {order}")
    nodes, weights = special.roots_legendre(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
