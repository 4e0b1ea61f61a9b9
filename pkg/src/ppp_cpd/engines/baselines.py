"""
Comparison detectors: blockwise MMD and kernel-intensity-estimate CUSUM.

Both compare the most recent W windows (post block) against the W windows
before them (pre block) and alarm when the statistic exceeds a threshold
calibrated on training data.
"""
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterable, List, Optional, Sequence

import numpy as np
import structlog
from scipy.spatial.distance import cdist, pdist

from ..core.errors import (
    DetectorStateError,
    DimensionMismatchError,
    InsufficientDataError,
    StreamOrderError,
)
from ..domain.models import AlarmReport, BaselineConfig, PointWindow

logger = structlog.get_logger(__name__)


def gaussian_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-0.5 * cdist(x, y, "sqeuclidean") / bandwidth ** 2)


def mmd_squared_unbiased(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """Unbiased squared MMD between two point sets with a Gaussian kernel.

    Empty sets, or sets too small for the within-sample U-statistic, give 0.
    """
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        return 0.0
    kxx = gaussian_kernel(x, x, bandwidth)
    kyy = gaussian_kernel(y, y, bandwidth)
    kxy = gaussian_kernel(x, y, bandwidth)
    a = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    b = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    c = kxy.sum() / (m * n)
    return float(a + b - 2.0 * c)


def median_heuristic(points: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance of (a seeded subsample of) the pooled points"""
    points = np.asarray(points, dtype=float)
    if len(points) > max_points:
        rng = np.random.default_rng(seed)
        points = points[rng.choice(len(points), size=max_points, replace=False)]
    if len(points) < 2:
        return 1.0
    distances = pdist(points)
    median = float(np.median(distances[distances > 0])) if np.any(distances > 0) else 1.0
    return median


def silverman_bandwidth(points: np.ndarray) -> np.ndarray:
    """Per-axis bandwidth n^(-1/(d+4)) * SD"""
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if n < 2:
        return np.full(d, 0.1)
    sd = points.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 0.1)
    return n ** (-1.0 / (d + 4)) * sd


def lattice(dim: int, grid_res: int) -> np.ndarray:
    """Cell midpoints of a grid_res^dim lattice on the unit cube"""
    axis = (np.arange(grid_res) + 0.5) / grid_res
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def kernel_intensity_sum(points: np.ndarray, grid: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    """Sum over points of the product Gaussian kernel evaluated on the grid"""
    if len(points) == 0:
        return np.zeros(len(grid))
    bandwidth = np.asarray(bandwidth, dtype=float)
    scaled_grid = grid / bandwidth
    scaled_points = points / bandwidth
    norm = np.prod(np.sqrt(2.0 * np.pi) * bandwidth)
    return np.exp(-0.5 * cdist(scaled_grid, scaled_points, "sqeuclidean")).sum(axis=1) / norm


def kie_statistic(pre_grid_sum: np.ndarray, n_pre: int, post_grid_sum: np.ndarray, n_post: int,
                  cell_volume: float) -> float:
    """Lattice-quadrature L2 distance of the two segment intensity estimates"""
    pre = pre_grid_sum / n_pre if n_pre > 0 else np.zeros_like(pre_grid_sum)
    post = post_grid_sum / n_post if n_post > 0 else np.zeros_like(post_grid_sum)
    return float(np.sqrt(np.sum((pre - post) ** 2) * cell_volume))


@dataclass
class BaselineState:
    """Buffer of the last 2W windows (points for MMD, lattice sums for KIE)"""
    j: int
    blocks: Deque = field(default_factory=deque)
    alarmed: bool = False
    alarm_report: Optional[AlarmReport] = None
    last_statistic: Optional[float] = None


class BaselineDetector:
    """Two-block sliding detector; subclasses supply the block statistic"""

    label = "baseline"

    def __init__(self, cfg: BaselineConfig, dim: int):
        self.cfg = cfg
        self.dim = dim
        self.window = cfg.window
        self.threshold = cfg.threshold
        self.logger = structlog.get_logger(__name__).bind(detector=self.label)

    def fit(self, training: Sequence[PointWindow]) -> None:
        """Resolve data-driven settings (bandwidth) from training windows"""
        raise NotImplementedError

    def summarize(self, window: PointWindow):
        raise NotImplementedError

    def statistic(self, pre: Sequence, post: Sequence, rng_key: int) -> float:
        raise NotImplementedError

    def init(self, training: Sequence[PointWindow]) -> BaselineState:
        training = list(training)
        if len(training) < 2 * self.window:
            raise InsufficientDataError(
                f"need at least 2W={2 * self.window} training windows, got {len(training)}"
            )
        state = BaselineState(j=training[-1].index, blocks=deque(maxlen=2 * self.window))
        for w in training[-2 * self.window:]:
            state.blocks.append(self.summarize(w))
        return state

    def advance(self, state: BaselineState, window: PointWindow) -> float:
        if state.alarmed:
            raise DetectorStateError("detector has alarmed; reset it before stepping again")
        if window.index != state.j + 1:
            raise StreamOrderError(
                f"expected window {state.j + 1}, got {window.index}",
                expected=state.j + 1, received=window.index,
            )
        if window.size and window.dim != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} coordinates, got {window.dim}")
        state.blocks.append(self.summarize(window))
        state.j += 1
        blocks = list(state.blocks)
        value = self.statistic(blocks[: self.window], blocks[self.window:], state.j)
        state.last_statistic = value
        return value

    def step(self, state: BaselineState, window: PointWindow) -> Optional[AlarmReport]:
        if self.threshold is None:
            raise DetectorStateError("baseline threshold is not calibrated")
        value = self.advance(state, window)
        if value <= self.threshold:
            return None
        report = AlarmReport(time=state.j, offset=1, score=value, threshold=self.threshold,
                             detector=self.label)
        state.alarmed = True
        state.alarm_report = report
        self.logger.info("Alarm raised", **report.to_dict())
        return report

    def run(self, state: BaselineState, windows: Iterable[PointWindow]) -> Optional[AlarmReport]:
        for window in windows:
            report = self.step(state, window)
            if report is not None:
                return report
        return None

    def ratio_trace(self, state: BaselineState, windows: Iterable[PointWindow]) -> np.ndarray:
        if self.threshold is None:
            raise DetectorStateError("baseline threshold is not calibrated")
        ratios: List[float] = []
        for window in windows:
            value = self.advance(state, window)
            if self.threshold > 0:
                ratios.append(value / self.threshold)
            else:
                ratios.append(np.inf if value > 0 else 0.0)
        return np.asarray(ratios)

    def block_statistic(self, first: Sequence[PointWindow], second: Sequence[PointWindow],
                        rng_key: int = 0) -> float:
        """Statistic between two arbitrary groups of windows (calibration)"""
        return self.statistic([self.summarize(w) for w in first],
                              [self.summarize(w) for w in second], rng_key)


class MMDDetector(BaselineDetector):
    """Blockwise unbiased MMD^2 between pooled pre and post points"""

    label = "mmd"

    def __init__(self, cfg: BaselineConfig, dim: int):
        super().__init__(cfg, dim)
        self.bandwidth = cfg.bandwidth

    def fit(self, training: Sequence[PointWindow]) -> None:
        if self.bandwidth is None:
            pooled = _pool([w.points for w in training], self.dim)
            self.bandwidth = median_heuristic(pooled, seed=self.cfg.seed)
            self.logger.info("Resolved MMD bandwidth", bandwidth=self.bandwidth)

    def summarize(self, window: PointWindow) -> np.ndarray:
        return window.points

    def _subsample(self, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cap = self.cfg.max_block_points
        if cap is None or len(points) <= cap:
            return points
        return points[rng.choice(len(points), size=cap, replace=False)]

    def statistic(self, pre: Sequence, post: Sequence, rng_key: int) -> float:
        if self.bandwidth is None:
            raise DetectorStateError("MMD bandwidth is not resolved; call fit() first")
        rng = np.random.default_rng([self.cfg.seed, rng_key])
        x = self._subsample(_pool(pre, self.dim), rng)
        y = self._subsample(_pool(post, self.dim), rng)
        return mmd_squared_unbiased(x, y, self.bandwidth)


class KIEDetector(BaselineDetector):
    """L2 distance of kernel intensity estimates on a lattice.

    Each window is reduced to its kernel sum on the lattice once, so a step
    only adds and compares fixed-size vectors.
    """

    label = "kie"

    def __init__(self, cfg: BaselineConfig, dim: int):
        super().__init__(cfg, dim)
        self.grid_res = cfg.resolved_grid_res(dim)
        self.grid = lattice(dim, self.grid_res)
        self.cell_volume = 1.0 / self.grid_res ** dim
        self.bandwidth = None if cfg.bandwidth is None else np.full(dim, cfg.bandwidth)

    def fit(self, training: Sequence[PointWindow]) -> None:
        if self.bandwidth is None:
            pooled = _pool([w.points for w in training], self.dim)
            self.bandwidth = silverman_bandwidth(pooled)
            self.logger.info("Resolved KIE bandwidth", bandwidth=self.bandwidth.tolist())

    def summarize(self, window: PointWindow) -> np.ndarray:
        if self.bandwidth is None:
            raise DetectorStateError("KIE bandwidth is not resolved; call fit() first")
        return kernel_intensity_sum(window.points, self.grid, self.bandwidth)

    def statistic(self, pre: Sequence, post: Sequence, rng_key: int) -> float:
        pre_sum = np.sum(pre, axis=0) if len(pre) else np.zeros(len(self.grid))
        post_sum = np.sum(post, axis=0) if len(post) else np.zeros(len(self.grid))
        return kie_statistic(pre_sum, len(pre), post_sum, len(post), self.cell_volume)


def _pool(point_sets: Sequence[np.ndarray], dim: int) -> np.ndarray:
    non_empty = [p for p in point_sets if len(p)]
    if not non_empty:
        return np.empty((0, dim))
    return np.concatenate(non_empty, axis=0)


def make_baseline(cfg: BaselineConfig, dim: int) -> BaselineDetector:
    return MMDDetector(cfg, dim) if cfg.kind == "mmd" else KIEDetector(cfg, dim)
