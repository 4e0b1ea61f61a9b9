"""
Sliding-window intensity CUSUM detectors.

Both detectors keep, at the current time j and for k = 1..W,

    L[k] = sum_{i=1}^{j-W+k-1} E_i        (prefix sums)
    R[k] = sum_{i=j-W+k}^{j}   E_i        (suffix sums)

where E_i is the embedding of window i, and compare the means
D = L[k] / n1 - R[k] / n2 with n1 = j - W - 1 + k, n2 = W - k + 1. The
matrix detector scores D with the restricted SVD, the 1D detector with the
Euclidean norm of the coefficient vector. The first k whose score exceeds
the threshold raises the alarm. Per-step cost depends on W only.

Time is counted from the start of the training segment, so a detector reset
on a restart segment behaves exactly like a fresh one.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..core.errors import (
    DetectorStateError,
    DimensionMismatchError,
    InsufficientDataError,
    StreamOrderError,
)
from ..domain.models import AlarmReport, DetectorConfig, PointWindow
from .embedding import embed_window, embed_window_1d
from .lowrank import restricted_svd_scores

logger = structlog.get_logger(__name__)


def threshold(j, n2, r: int, gamma: float, pq_max: int, c_alpha: float):
    """C_alpha * (r / n2) ** (gamma / (2 gamma + p v q)) * ln(j)"""
    n2 = np.asarray(n2, dtype=float)
    value = c_alpha * (r / n2) ** (gamma / (2.0 * gamma + pq_max)) * np.log(j)
    return float(value) if value.ndim == 0 else value


def threshold_1d(j, n2, gamma: float, c_alpha: float):
    """C_alpha * n2 ** (-gamma / (2 gamma + 1)) * ln(j)"""
    n2 = np.asarray(n2, dtype=float)
    value = c_alpha * n2 ** (-gamma / (2.0 * gamma + 1.0)) * np.log(j)
    return float(value) if value.ndim == 0 else value


@dataclass
class DetectorState:
    """Streaming state; single owner, driven strictly in window order"""
    j: int
    origin: int
    L: np.ndarray
    R: np.ndarray
    recent: np.ndarray
    alarmed: bool = False
    alarm_report: Optional[AlarmReport] = None
    last_scores: Optional[np.ndarray] = field(default=None, repr=False)
    last_thresholds: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def local_time(self) -> int:
        return self.j - self.origin

    @property
    def window(self) -> int:
        return self.L.shape[0]


class SlidingCusumDetector:
    """Shared prefix/suffix bookkeeping of the matrix and 1D detectors"""

    label = "cusum"

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.window = cfg.window
        self.basis_size = cfg.basis_size
        self.logger = structlog.get_logger(__name__).bind(detector=self.label)

    # subclass hooks

    def embed(self, window: PointWindow) -> np.ndarray:
        raise NotImplementedError

    def scores(self, stack: np.ndarray, n2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def thresholds(self, t: int, n2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        raise NotImplementedError

    # lifecycle

    def embed_all(self, windows: Sequence[PointWindow]) -> np.ndarray:
        return np.stack([self.embed(w) for w in windows])

    def init(self, training: Sequence[PointWindow]) -> DetectorState:
        """Build the prefix-sum list from a training segment"""
        training = list(training)
        if not training:
            raise InsufficientDataError("training segment is empty")
        n_train = len(training)
        W = self.window
        if n_train < W:
            raise InsufficientDataError(f"need at least W={W} training windows, got {n_train}")
        first = training[0].index
        for offset, w in enumerate(training):
            if w.index != first + offset:
                raise StreamOrderError(
                    f"training windows must be consecutive, expected index {first + offset}",
                    expected=first + offset, received=w.index,
                )

        E = self.embed_all(training)
        base = E[: n_train - W].sum(axis=0)
        L = np.empty((W,) + E.shape[1:])
        L[0] = base
        for k in range(1, W):
            L[k] = L[k - 1] + E[n_train - W + k - 1]
        state = DetectorState(
            j=training[-1].index,
            origin=first - 1,
            L=L,
            R=np.zeros_like(L),
            recent=E[n_train - W:].copy(),
        )
        self.logger.info("Detector initialized",
                         n_train=n_train, window=W, basis_size=self.basis_size,
                         threshold_const=self.cfg.threshold_const)
        return state

    def advance(self, state: DetectorState, window: PointWindow) -> Tuple[np.ndarray, np.ndarray]:
        """Ingest window j + 1 and return (scores, thresholds) for k = 1..W"""
        if state.alarmed:
            raise DetectorStateError("detector has alarmed; reset it before stepping again")
        if window.index != state.j + 1:
            raise StreamOrderError(
                f"expected window {state.j + 1}, got {window.index}",
                expected=state.j + 1, received=window.index,
            )
        if window.size and window.dim != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} coordinates, got {window.dim}")

        embedded = self.embed(window)
        W = state.window

        # shift L, then L[W] += E_{j-1}; L[W] still holds its pre-shift value here
        previous = state.recent[-1]
        state.L[:-1] = state.L[1:]
        state.L[-1] = state.L[-1] + previous

        state.recent[:-1] = state.recent[1:]
        state.recent[-1] = embedded
        state.j += 1

        state.R = np.cumsum(state.recent[::-1], axis=0)[::-1]

        t = state.local_time
        k = np.arange(1, W + 1)
        n1 = (t - W - 1 + k).astype(float)
        n2 = (W - k + 1).astype(float)
        shape = (W,) + (1,) * (state.L.ndim - 1)
        D = state.L / n1.reshape(shape) - state.R / n2.reshape(shape)

        scores = self.scores(D, n2)
        limits = self.thresholds(t, n2)
        state.last_scores = scores
        state.last_thresholds = limits
        return scores, limits

    def step(self, state: DetectorState, window: PointWindow) -> Optional[AlarmReport]:
        scores, limits = self.advance(state, window)
        exceed = np.flatnonzero(scores > limits)
        if exceed.size == 0:
            return None
        k = int(exceed[0])
        report = AlarmReport(
            time=state.j,
            offset=k + 1,
            score=float(scores[k]),
            threshold=float(limits[k]),
            detector=self.label,
        )
        state.alarmed = True
        state.alarm_report = report
        self.logger.info("Alarm raised", **report.to_dict())
        return report

    def run(self, state: DetectorState, windows: Iterable[PointWindow]) -> Optional[AlarmReport]:
        """Step through windows until the first alarm"""
        for window in windows:
            report = self.step(state, window)
            if report is not None:
                return report
        return None

    def ratio_trace(self, state: DetectorState, windows: Iterable[PointWindow]) -> np.ndarray:
        """Per-window max of score / threshold, without stopping at alarms.

        Under threshold multiplier c the detector alarms at the first window
        whose ratio exceeds c.
        """
        ratios: List[float] = []
        for window in windows:
            scores, limits = self.advance(state, window)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(limits > 0, scores / limits, np.where(scores > 0, np.inf, 0.0))
            ratios.append(float(np.max(ratio)))
        return np.asarray(ratios)

    def reset_after_alarm(self, state: DetectorState,
                          restart_training: Sequence[PointWindow]) -> DetectorState:
        """Fresh state from a restart segment following an alarm"""
        if not state.alarmed:
            raise DetectorStateError("reset_after_alarm requires an alarmed detector")
        restart_training = list(restart_training)
        if len(restart_training) < self.window:
            raise InsufficientDataError(
                f"restart needs at least W={self.window} windows, got {len(restart_training)}"
            )
        self.logger.info("Restarting detector", after_alarm=state.alarm_report.time,
                         restart_from=restart_training[0].index)
        return self.init(restart_training)


class MatrixDetector(SlidingCusumDetector):
    """Low-rank intensity-matrix detector for d >= 2"""

    label = "matrix"

    def __init__(self, cfg: DetectorConfig):
        if cfg.split is None:
            raise DimensionMismatchError("the matrix detector needs a coordinate split")
        super().__init__(cfg)
        self.split = cfg.split

    @property
    def dim(self) -> int:
        return self.split.dim

    def embed(self, window: PointWindow) -> np.ndarray:
        if window.size == 0:
            return np.zeros((self.basis_size ** self.split.p, self.basis_size ** self.split.q))
        return embed_window(window, self.split, self.basis_size)

    def scores(self, stack: np.ndarray, n2: np.ndarray) -> np.ndarray:
        return restricted_svd_scores(stack, self.cfg.rank, n2.astype(int),
                                     self.split.p, self.split.q, self.cfg.gamma)

    def thresholds(self, t: int, n2: np.ndarray) -> np.ndarray:
        return threshold(t, n2, self.cfg.rank, self.cfg.gamma, self.split.pq_max,
                         self.cfg.threshold_const)


class VectorDetector(SlidingCusumDetector):
    """One-dimensional coefficient-vector detector"""

    label = "matrix_1d"

    @property
    def dim(self) -> int:
        return 1

    def embed(self, window: PointWindow) -> np.ndarray:
        if window.size == 0:
            return np.zeros(self.basis_size)
        return embed_window_1d(window, self.basis_size)

    def scores(self, stack: np.ndarray, n2: np.ndarray) -> np.ndarray:
        return np.linalg.norm(stack, axis=1)

    def thresholds(self, t: int, n2: np.ndarray) -> np.ndarray:
        return threshold_1d(t, n2, self.cfg.gamma, self.cfg.threshold_const)


def make_detector(cfg: DetectorConfig) -> SlidingCusumDetector:
    return VectorDetector(cfg) if cfg.is_1d else MatrixDetector(cfg)


def run_stream(detector: SlidingCusumDetector, state: DetectorState,
               windows: Iterable[PointWindow]) -> Optional[AlarmReport]:
    return detector.run(state, windows)
