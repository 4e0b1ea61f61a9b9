"""
Calibration Service for ppp_cpd

Selects every tuning parameter from training windows: the coordinate split
(minimum mean absolute cross-group correlation), the rank (agreement of the
rank-r truncations of two half-sample means) and the threshold constant.
The default threshold replays block-shuffled training windows through the
streaming statistic and takes a quantile of each run's largest normalized
score; the alternative is the permutation quantile of the normalized
Frobenius norm of two-half mean differences. Baseline thresholds are
permutation quantiles of the baseline's own block statistic.
"""

import itertools
import math
from typing import List, Optional, Sequence

import numpy as np
import structlog

from ..core.errors import DomainError, InsufficientDataError
from ..domain.models import (
    CalibrationMethod,
    CalibrationReport,
    CoordinateSplit,
    PointWindow,
    basis_size,
    basis_size_1d,
)
from ..engines.baselines import BaselineDetector
from ..engines.embedding import embed_window, embed_window_1d
from ..engines.lowrank import restricted_svd_scores, truncated_svd

logger = structlog.get_logger(__name__)

SPLIT_TIE_TOLERANCE = 1e-12


def all_bipartitions(dim: int) -> List[CoordinateSplit]:
    """Every unordered nontrivial bipartition, each listed once with 0 in group_y.

    Ordered by the sorted group_y tuple, so the first minimizer found is the
    lexicographically smallest.
    """
    if dim < 2:
        raise DomainError(f"a coordinate split needs d >= 2, got {dim}")
    rest = list(range(1, dim))
    splits = []
    for size in range(0, dim - 1):
        for extra in itertools.combinations(rest, size):
            group_y = (0,) + extra
            group_z = tuple(c for c in range(dim) if c not in group_y)
            splits.append(CoordinateSplit(group_y=group_y, group_z=group_z))
    return sorted(splits, key=lambda s: s.group_y)


def split_objective(abs_corr: np.ndarray, split: CoordinateSplit) -> float:
    """Mean |corr(i, j)| over i in group_y, j in group_z"""
    block = abs_corr[np.ix_(list(split.group_y), list(split.group_z))]
    return float(block.mean())


def pooled_points(windows: Sequence[PointWindow]) -> np.ndarray:
    arrays = [w.points for w in windows if w.size]
    if not arrays:
        return np.empty((0, windows[0].dim if windows else 0))
    return np.concatenate(arrays, axis=0)


def coordinate_split(training: Sequence[PointWindow]) -> CoordinateSplit:
    """Split minimizing the mean absolute cross-group correlation of pooled points"""
    points = pooled_points(training)
    if points.shape[0] < 2:
        raise InsufficientDataError("coordinate split needs at least 2 pooled training points")
    dim = points.shape[1]
    sd = points.std(axis=0)
    if np.any(sd == 0):
        raise DomainError(f"coordinates {np.flatnonzero(sd == 0).tolist()} have zero variance")
    abs_corr = np.abs(np.corrcoef(points, rowvar=False))

    best, best_value = None, math.inf
    for split in all_bipartitions(dim):
        value = split_objective(abs_corr, split)
        if value < best_value - SPLIT_TIE_TOLERANCE:
            best, best_value = split, value
    logger.info("Selected coordinate split", group_y=list(best.group_y),
                group_z=list(best.group_z), objective=best_value)
    return best


def embed_all(training: Sequence[PointWindow], split: Optional[CoordinateSplit], M: int) -> np.ndarray:
    """Stack of embeddings; vectors when split is None"""
    if split is None:
        return np.stack([embed_window_1d(w, M) for w in training])
    return np.stack([embed_window(w, split, M) for w in training])


def rank_objective(first: np.ndarray, second: np.ndarray, rank: int) -> float:
    """||svd(first, r) - svd(second, r)||_F"""
    return float(np.linalg.norm(truncated_svd(first, rank) - truncated_svd(second, rank), "fro"))


def select_rank_from_means(first: np.ndarray, second: np.ndarray) -> int:
    """Smallest minimizer of the rank objective over 1..min(rows, cols)"""
    best_rank, best_value = 1, math.inf
    for rank in range(1, min(first.shape) + 1):
        value = rank_objective(first, second, rank)
        if value < best_value - SPLIT_TIE_TOLERANCE:
            best_rank, best_value = rank, value
    return best_rank


def _even(n: int) -> int:
    return n - (n % 2)


def select_rank(training: Sequence[PointWindow], gamma: float, split: CoordinateSplit,
                window: int) -> int:
    """Rank from the first-half and second-half training means at M_cal.

    M_cal is the basis size for rank 1; an odd trailing window is dropped.
    """
    n = _even(len(training))
    if n < 4:
        raise InsufficientDataError(f"rank selection needs at least 4 training windows, got {len(training)}")
    m_cal = basis_size(window, 1, gamma, split.pq_max)
    embedded = embed_all(training[:n], split, m_cal)
    first = embedded[: n // 2].mean(axis=0)
    second = embedded[n // 2:].mean(axis=0)
    rank = select_rank_from_means(first, second)
    logger.info("Selected rank", rank=rank, calibration_basis_size=m_cal)
    return rank


def order_statistic_quantile(values: Sequence[float], alpha: float) -> float:
    """The ceil((1 - alpha) B)-th smallest of B values"""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise DomainError("quantile of an empty set")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    position = math.ceil((1.0 - alpha) * values.size - 1e-12)
    return float(values[min(max(position, 1), values.size) - 1])


def permutation_statistics(embedded: np.ndarray, permutations: int, seed: int) -> np.ndarray:
    """||mean(first half) - mean(second half)||_F for B seeded shuffles.

    An odd trailing window is dropped. Shuffle b is the b-th call of
    ``default_rng(seed).permutation(N)``.
    """
    if permutations < 1:
        raise DomainError(f"need at least one permutation, got {permutations}")
    n = _even(embedded.shape[0])
    if n < 2:
        raise InsufficientDataError("permutation calibration needs at least 2 training windows")
    flat = embedded[:n].reshape(n, -1)
    rng = np.random.default_rng(seed)
    weights = np.empty((permutations, n))
    for b in range(permutations):
        order = rng.permutation(n)
        weights[b, order[: n // 2]] = 2.0 / n
        weights[b, order[n // 2:]] = -2.0 / n
    return np.linalg.norm(weights @ flat, axis=1)


def threshold_normalizer(n_train: int, rank: int, gamma: float, pq_max: int) -> float:
    """(2 r / N) ** (gamma / (2 gamma + p v q)) * ln N"""
    return (2.0 * rank / n_train) ** (gamma / (2.0 * gamma + pq_max)) * math.log(n_train)


def _operational_basis_size(rank: int, gamma: float, split: Optional[CoordinateSplit],
                            M: Optional[int], window: Optional[int]) -> int:
    if M is not None:
        return M
    if window is None:
        raise DomainError("threshold calibration needs a basis size or a window")
    if split is None:
        return basis_size_1d(window, gamma)
    return basis_size(window, rank, gamma, split.pq_max)


def calibrate_threshold(training: Sequence[PointWindow], rank: int, gamma: float,
                        split: Optional[CoordinateSplit], alpha: float, permutations: int = 500,
                        seed: int = 0, M: Optional[int] = None, window: Optional[int] = None) -> float:
    """Permutation quantile C_alpha at basis size M (derived from window if omitted).

    Each shuffle's two-half Frobenius distance is divided by the normalizer
    at N = len(training).
    """
    pq_max = 1 if split is None else split.pq_max
    M = _operational_basis_size(rank, gamma, split, M, window)
    embedded = embed_all(training, split, M)
    stats = permutation_statistics(embedded, permutations, seed)
    normalizer = threshold_normalizer(len(training), rank, gamma, pq_max)
    c_alpha = order_statistic_quantile(stats / normalizer, alpha)
    logger.info("Calibrated threshold constant", method="frobenius", threshold_const=c_alpha,
                alpha=alpha, permutations=permutations, basis_size=M)
    return c_alpha


def block_permutation(n: int, block_length: int, rng: np.random.Generator) -> np.ndarray:
    """0..n-1 reordered by shuffling runs of ``block_length`` consecutive indices"""
    if block_length < 1:
        raise DomainError(f"block length must be >= 1, got {block_length}")
    starts = np.arange(0, n, block_length)
    return np.concatenate(
        [np.arange(s, min(s + block_length, n)) for s in starts[rng.permutation(len(starts))]]
    )


def horizon_reference(n_train: int, window: int) -> int:
    """Training windows that initialize each pseudo monitoring run"""
    return max(n_train // 2, window)


def threshold_shape(n2: np.ndarray, rank: int, gamma: float, split: Optional[CoordinateSplit]) -> np.ndarray:
    """Threshold divided by C_alpha * ln j"""
    n2 = np.asarray(n2, dtype=float)
    if split is None:
        return n2 ** (-gamma / (2.0 * gamma + 1.0))
    return (rank / n2) ** (gamma / (2.0 * gamma + split.pq_max))


def horizon_maxima(embedded: np.ndarray, window: int, gamma: float, rank: int = 1,
                   split: Optional[CoordinateSplit] = None, permutations: int = 100,
                   seed: int = 0, block_length: int = 10, chunk: int = 64) -> np.ndarray:
    """Largest score / (shape(n2) ln j) of each pseudo monitoring run.

    Run b block-shuffles the training embeddings with the b-th draw of
    ``default_rng(seed)``, treats the first n_ref windows as training and
    scores windows n_ref + 1..N exactly as the streaming detector would at
    C_alpha = 1. ``split`` None scores coefficient vectors by their norm.
    """
    if permutations < 1:
        raise DomainError(f"need at least one permutation, got {permutations}")
    n = embedded.shape[0]
    n_ref = horizon_reference(n, window)
    if n <= n_ref:
        raise InsufficientDataError(
            f"sequential calibration needs more than max(N // 2, W)={n_ref} training windows, got {n}"
        )
    n2s = np.arange(window, 0, -1)
    shape = threshold_shape(n2s, rank, gamma, split)
    js = np.arange(n_ref + 1, n + 1)
    trailing = (1,) * (embedded.ndim - 1)

    rng = np.random.default_rng(seed)
    maxima = np.empty(permutations)
    for b in range(permutations):
        order = block_permutation(n, block_length, rng)
        cs = np.concatenate([np.zeros((1,) + embedded.shape[1:]), np.cumsum(embedded[order], axis=0)])
        best = 0.0
        for lo in range(0, len(js), chunk):
            j = js[lo: lo + chunk]
            pre_end = j[:, None] - n2s[None, :]
            prefix = cs[pre_end]
            n1 = pre_end.reshape(pre_end.shape + trailing)
            n2 = n2s.reshape((1, -1) + trailing)
            D = prefix / n1 - (cs[j][:, None] - prefix) / n2
            if split is None:
                scores = np.linalg.norm(D, axis=-1)
            else:
                scores = restricted_svd_scores(D, rank, n2s, split.p, split.q, gamma)
            stats = scores / (shape[None, :] * np.log(j)[:, None])
            best = max(best, float(stats.max()))
        maxima[b] = best
    return maxima


def calibrate_sequential_threshold(training: Sequence[PointWindow], rank: int, gamma: float,
                                   split: Optional[CoordinateSplit], alpha: float, window: int,
                                   permutations: int = 100, seed: int = 0, block_length: int = 10,
                                   M: Optional[int] = None) -> float:
    """C_alpha as the (1 - alpha) quantile of pseudo monitoring maxima"""
    M = _operational_basis_size(rank, gamma, split, M, window)
    embedded = embed_all(training, split, M)
    maxima = horizon_maxima(embedded, window, gamma, rank, split, permutations, seed, block_length)
    c_alpha = order_statistic_quantile(maxima, alpha)
    logger.info("Calibrated threshold constant", method="sequential", threshold_const=c_alpha,
                alpha=alpha, permutations=permutations, block_length=block_length,
                horizon=len(training) - horizon_reference(len(training), window), basis_size=M)
    return c_alpha


def calibrate(training: Sequence[PointWindow], window: int = 100, gamma: float = 2.0,
              alpha: float = 0.05, permutations: int = 500, seed: int = 0,
              split: Optional[CoordinateSplit] = None, rank: Optional[int] = None,
              one_dimensional: bool = False, method: CalibrationMethod = "sequential",
              horizon_permutations: int = 100, block_length: int = 10) -> CalibrationReport:
    """Full tuning pass: split, then M_cal, rank, operational M and C_alpha.

    ``split`` and ``rank`` skip their selection step when given. The 1D
    variant fixes the rank at 1 and uses vector embeddings. ``method``
    picks the threshold statistic: "sequential" replays block-shuffled
    training through the streaming score (``horizon_permutations`` runs),
    "frobenius" uses the two-half distance (``permutations`` shuffles).
    """
    training = list(training)
    if len(training) < max(window, 4):
        raise InsufficientDataError(
            f"calibration needs at least max(W, 4)={max(window, 4)} training windows, got {len(training)}"
        )

    if one_dimensional:
        split, rank = None, 1
        M = basis_size_1d(window, gamma)
    else:
        if split is None:
            split = coordinate_split(training)
        if rank is None:
            rank = select_rank(training, gamma, split, window)
        M = basis_size(window, rank, gamma, split.pq_max)

    if method == "sequential":
        used = horizon_permutations
        c_alpha = calibrate_sequential_threshold(training, rank, gamma, split, alpha, window,
                                                 used, seed, block_length, M=M)
    elif method == "frobenius":
        used = permutations
        c_alpha = calibrate_threshold(training, rank, gamma, split, alpha, used, seed, M=M)
    else:
        raise DomainError(f"unknown calibration method {method!r}")
    return CalibrationReport(split=split, rank=rank, threshold_const=c_alpha, alpha=alpha,
                             permutations=used, seed=seed, gamma=gamma, window=window,
                             basis_size=M, n_train=len(training), method=method,
                             block_length=block_length if method == "sequential" else None)


def calibrate_baseline(training: Sequence[PointWindow], detector: BaselineDetector, alpha: float,
                       permutations: int = 500, seed: int = 0) -> float:
    """Permutation quantile of a baseline's block statistic.

    Each shuffle compares two disjoint groups of min(W, N // 2) windows, the
    block size seen while streaming. The detector is fitted first.
    """
    training = list(training)
    if permutations < 1:
        raise DomainError(f"need at least one permutation, got {permutations}")
    group = min(detector.window, len(training) // 2)
    if group < 1:
        raise InsufficientDataError("baseline calibration needs at least 2 training windows")
    detector.fit(training)
    summaries = [detector.summarize(w) for w in training]
    rng = np.random.default_rng(seed)
    stats = np.empty(permutations)
    for b in range(permutations):
        order = rng.permutation(len(training))
        first = [summaries[i] for i in order[:group]]
        second = [summaries[i] for i in order[group: 2 * group]]
        stats[b] = detector.statistic(first, second, b)
    threshold = order_statistic_quantile(stats, alpha)
    detector.threshold = threshold
    logger.info("Calibrated baseline threshold", detector=detector.label, threshold=threshold,
                alpha=alpha, permutations=permutations)
    return threshold
