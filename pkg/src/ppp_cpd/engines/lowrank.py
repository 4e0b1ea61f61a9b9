"""
Dense SVD utilities and the restricted SVD score.

The restricted score zeroes every row/column whose multi-index has an entry
above the adaptive cut m = ceil((n2 / r) ** (1 / (2 gamma + p v q))), capped at
M, and returns the Frobenius norm of the best rank-r approximation of what is
left, i.e. sqrt(sum_{k <= r} sigma_k^2).
"""
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from ..core.errors import DimensionMismatchError, DomainError
from ..domain.validate import check_finite
from .legendre import max_entries


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD with singular values sorted nonincreasing"""
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    def reconstruct(self, rank: int = None) -> np.ndarray:
        r = len(self.singular_values) if rank is None else min(rank, len(self.singular_values))
        return (self.u[:, :r] * self.singular_values[:r]) @ self.vt[:r, :]


def _as_matrix(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {D.shape}")
    check_finite(D)
    return D


def svd(D: np.ndarray) -> SvdResult:
    D = _as_matrix(D)
    u, s, vt = scipy.linalg.svd(D, full_matrices=False, lapack_driver="gesvd")
    return SvdResult(u=u, singular_values=s, vt=vt)


def truncated_svd(D: np.ndarray, r: int) -> np.ndarray:
    """Best rank-min(r, rank(D)) approximation D[r]"""
    if r < 1:
        raise DomainError(f"rank must be >= 1, got {r}")
    return svd(D).reconstruct(r)


def frobenius(D: np.ndarray) -> float:
    return float(np.linalg.norm(_as_matrix(D), "fro"))


def operator_norm(D: np.ndarray) -> float:
    """Largest singular value"""
    D = _as_matrix(D)
    if D.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(D)[0])


def trim_size(n2: int, r: int, gamma: float, pq_max: int, M: int) -> int:
    """Adaptive basis cut m, capped at the stored basis size M"""
    if n2 < 1 or r < 1 or gamma <= 0:
        raise DomainError(f"need n2 >= 1, r >= 1, gamma > 0; got n2={n2}, r={r}, gamma={gamma}")
    m = math.ceil((n2 / r) ** (1.0 / (2.0 * gamma + pq_max)) - 1e-12)
    return max(1, min(m, M))


def trim_masks(M: int, p: int, q: int, m: int):
    """Boolean row and column masks keeping multi-indices with all entries <= m"""
    return max_entries(M, p) <= m, max_entries(M, q) <= m


def _basis_size(shape, p: int, q: int) -> int:
    M = int(round(shape[-2] ** (1.0 / p)))
    if M ** p != shape[-2] or M ** q != shape[-1]:
        raise DimensionMismatchError(
            f"matrix shape {shape[-2:]} is not (M^{p}, M^{q}) for any basis size M"
        )
    return M


def restricted_svd_score(D: np.ndarray, r: int, n2: int, p: int, q: int, gamma: float) -> float:
    """Frobenius norm of the rank-r truncation of the trimmed matrix"""
    D = _as_matrix(D)
    M = _basis_size(D.shape, p, q)
    m = trim_size(n2, r, gamma, max(p, q), M)
    rows, cols = trim_masks(M, p, q, m)
    trimmed = D[np.ix_(rows, cols)]
    sigma = scipy.linalg.svdvals(trimmed)
    return float(np.sqrt(np.sum(sigma[:r] ** 2)))


def rank_r_norms(blocks: np.ndarray, r: int) -> np.ndarray:
    """sqrt of the sum of the r largest squared singular values, over the last two axes.

    Computed from the eigenvalues of the smaller Gram matrix; the 2 x 2 case
    is solved in closed form.
    """
    blocks = np.asarray(blocks, dtype=float)
    rows, cols = blocks.shape[-2:]
    if min(rows, cols) <= r:
        return np.sqrt(np.sum(blocks ** 2, axis=(-2, -1)))
    flipped = np.swapaxes(blocks, -1, -2)
    gram = blocks @ flipped if rows <= cols else flipped @ blocks
    if gram.shape[-1] == 2:
        a, b, d = gram[..., 0, 0], gram[..., 0, 1], gram[..., 1, 1]
        return np.sqrt(0.5 * (a + d) + np.hypot(0.5 * (a - d), b))
    eigenvalues = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(eigenvalues[..., -r:].sum(axis=-1), 0.0, None))


def restricted_svd_scores(stack: np.ndarray, r: int, n2s: Sequence[int], p: int, q: int,
                          gamma: float) -> np.ndarray:
    """Batched restricted scores for a ``(..., K, M^p, M^q)`` stack.

    ``n2s[k]`` applies to every matrix at position k of the third-to-last
    axis. Matrices sharing the same cut m are scored together; values match
    :func:`restricted_svd_score` entry by entry.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.ndim < 3 or len(n2s) != stack.shape[-3]:
        raise DimensionMismatchError("stack must be (..., K, rows, cols) with one n2 per position")
    check_finite(stack, "CUSUM stack")
    M = _basis_size(stack.shape, p, q)
    cuts = np.array([trim_size(int(n2), r, gamma, max(p, q), M) for n2 in n2s])
    scores = np.empty(stack.shape[:-2])
    for m in np.unique(cuts):
        members = np.flatnonzero(cuts == m)
        rows, cols = trim_masks(M, p, q, int(m))
        block = stack[..., members, :, :][..., rows, :][..., cols]
        scores[..., members] = rank_r_norms(block, r)
    return scores
