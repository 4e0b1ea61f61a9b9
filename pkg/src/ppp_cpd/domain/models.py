"""Domain models for ppp_cpd"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.errors import DimensionMismatchError
from .validate import check_unit_cube


@dataclass
class PointWindow:
    """One time-indexed PPP realization on the unit hypercube.

    Points are stored as an ``(n, d)`` float array; an empty window keeps its
    dimension through a ``(0, d)`` array.
    """
    index: int
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1) if points.size else points.reshape(0, 1)
        if points.ndim != 2:
            raise DimensionMismatchError(f"points must be a 2D array, got shape {points.shape}")
        check_unit_cube(points)
        self.points = points

    @classmethod
    def empty(cls, index: int, dim: int) -> "PointWindow":
        return cls(index=index, points=np.empty((0, dim)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class AlarmReport:
    """Alarm raised by a detector"""
    time: int                # window index j at which the alarm fired
    offset: int              # k in 1..W, first exceedance
    score: float
    threshold: float
    detector: str = "matrix"

    @property
    def ratio(self) -> float:
        if self.threshold <= 0:
            return math.inf
        return self.score / self.threshold

    def to_dict(self) -> Dict[str, object]:
        return {
            "detector": self.detector,
            "time": self.time,
            "offset": self.offset,
            "score": self.score,
            "threshold": self.threshold,
        }


class CoordinateSplit(BaseModel):
    """Partition of the d coordinates into row (y) and column (z) groups.

    Coordinate positions are 0-based column indices into the point arrays.
    """
    model_config = ConfigDict(frozen=True)

    group_y: Tuple[int, ...] = Field(..., description="Coordinates feeding the row basis")
    group_z: Tuple[int, ...] = Field(..., description="Coordinates feeding the column basis")

    @model_validator(mode="after")
    def _check_partition(self) -> "CoordinateSplit":
        if not self.group_y or not self.group_z:
            raise ValueError("both coordinate groups must be nonempty")
        merged = sorted(self.group_y + self.group_z)
        if merged != list(range(len(merged))):
            raise ValueError(
                f"groups {self.group_y} and {self.group_z} must partition 0..{len(merged) - 1}"
            )
        return self

    @classmethod
    def default(cls, dim: int) -> "CoordinateSplit":
        """First coordinate against the rest."""
        return cls(group_y=(0,), group_z=tuple(range(1, dim)))

    @property
    def p(self) -> int:
        return len(self.group_y)

    @property
    def q(self) -> int:
        return len(self.group_z)

    @property
    def dim(self) -> int:
        return self.p + self.q

    @property
    def pq_max(self) -> int:
        return max(self.p, self.q)


def basis_size(window: int, rank: int, gamma: float, pq_max: int) -> int:
    """M = ceil((W / r) ** (1 / (2 gamma + p v q)))"""
    return max(1, math.ceil((window / rank) ** (1.0 / (2.0 * gamma + pq_max)) - 1e-12))


def basis_size_1d(window: int, gamma: float) -> int:
    """M = ceil(W ** (1 / (2 gamma + 1)))"""
    return max(1, math.ceil(window ** (1.0 / (2.0 * gamma + 1.0)) - 1e-12))


class DetectorConfig(BaseModel):
    """Hyperparameters of the sliding-window intensity CUSUM detector.

    ``split`` is None for the one-dimensional vector detector.
    """
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(2.0, gt=0, description="Smoothness")
    split: Optional[CoordinateSplit] = None
    rank: int = Field(1, ge=1)
    window: int = Field(100, ge=2)
    threshold_const: float = Field(..., ge=0, description="C_alpha")
    n_train: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def _check_window(self) -> "DetectorConfig":
        if self.n_train is not None and self.window > self.n_train:
            raise ValueError(f"window {self.window} exceeds training length {self.n_train}")
        return self

    @property
    def is_1d(self) -> bool:
        return self.split is None

    @property
    def pq_max(self) -> int:
        return 1 if self.split is None else self.split.pq_max

    @property
    def basis_size(self) -> int:
        if self.split is None:
            return basis_size_1d(self.window, self.gamma)
        return basis_size(self.window, self.rank, self.gamma, self.split.pq_max)


class BaselineConfig(BaseModel):
    """Settings of the MMD and KIE comparison detectors"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["mmd", "kie"]
    bandwidth: Optional[float] = Field(None, gt=0, description="None resolves from training data")
    grid_res: Optional[int] = Field(None, ge=4, description="Lattice points per axis (kie)")
    window: int = Field(100, ge=2)
    threshold: Optional[float] = Field(None, ge=0)
    max_block_points: Optional[int] = Field(
        None, ge=2, description="Subsample cap per pooled block (mmd); None pools every point"
    )
    seed: int = 0

    def resolved_grid_res(self, dim: int) -> int:
        if self.grid_res is not None:
            return self.grid_res
        return 16 if dim <= 3 else 8


ScenarioKind = Literal["const_intensity", "scenario_1d", "scenario_3d", "scenario_4d", "custom"]

SCENARIO_DIMS = {"scenario_1d": 1, "scenario_3d": 3, "scenario_4d": 4}


class Scenario(BaseModel):
    """Synthetic PPP stream with at most one planted change"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ScenarioKind = "scenario_3d"
    n_train: int = Field(1000, ge=2)
    n_total: int = Field(1500, ge=3)
    change_at: Optional[int] = Field(1200, description="Last pre-change window index")
    change_scale: float = Field(1.0, gt=0, le=1, description="Mixing weight of the post-change family")
    params: Dict[str, float] = Field(default_factory=dict)
    seed: int = 0

    @model_validator(mode="after")
    def _check_change(self) -> "Scenario":
        if self.n_train >= self.n_total:
            raise ValueError("n_train must be smaller than n_total")
        if self.change_at is not None and not (self.n_train < self.change_at < self.n_total):
            raise ValueError(
                f"change_at must satisfy n_train < change_at < n_total, got {self.change_at}"
            )
        return self

    @property
    def dim(self) -> int:
        if self.kind in SCENARIO_DIMS:
            return SCENARIO_DIMS[self.kind]
        return int(self.params.get("dim", 2))

    def without_change(self) -> "Scenario":
        return self.model_copy(update={"change_at": None})


DetectorKind = Literal["matrix", "matrix_1d", "mmd", "kie"]


class DetectorSpec(BaseModel):
    """One detector entry of an experiment"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: DetectorKind
    name: Optional[str] = None
    window: int = Field(100, ge=2)
    gamma: float = Field(2.0, gt=0)
    rank: Optional[int] = Field(None, ge=1, description="None selects the rank from training data")
    split: Optional[CoordinateSplit] = Field(None, description="None selects the split from training data")
    bandwidth: Optional[float] = Field(None, gt=0)
    grid_res: Optional[int] = Field(None, ge=4)
    max_block_points: Optional[int] = Field(None, ge=2)

    @property
    def label(self) -> str:
        return self.name or self.kind

    @property
    def is_baseline(self) -> bool:
        return self.kind in ("mmd", "kie")


CalibrationMethod = Literal["sequential", "frobenius"]


def default_multipliers() -> List[float]:
    return [float(x) for x in np.geomspace(0.25, 4.0, 15)]


class ExperimentSpec(BaseModel):
    """Monte Carlo experiment over one scenario and several detectors"""
    model_config = ConfigDict(frozen=True)

    scenario: Scenario = Field(default_factory=Scenario)
    detectors: List[DetectorSpec] = Field(
        default_factory=lambda: [DetectorSpec(kind="matrix")]
    )
    replications: int = Field(100, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)
    permutations: int = Field(500, ge=1)
    calibration_method: CalibrationMethod = "sequential"
    horizon_permutations: int = Field(100, ge=1)
    block_length: int = Field(10, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    multipliers: List[float] = Field(default_factory=default_multipliers)
    output_path: Optional[str] = None

    @field_validator("detectors")
    @classmethod
    def _unique_labels(cls, detectors: List[DetectorSpec]) -> List[DetectorSpec]:
        if not detectors:
            raise ValueError("at least one detector is required")
        labels = [d.label for d in detectors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"detector labels must be unique, got {labels}")
        return detectors

    @field_validator("multipliers")
    @classmethod
    def _sorted_multipliers(cls, multipliers: List[float]) -> List[float]:
        if any(m < 0 for m in multipliers):
            raise ValueError("multipliers must be nonnegative")
        if list(multipliers) != sorted(multipliers):
            raise ValueError("multipliers must be sorted ascending")
        return multipliers


class CalibrationReport(BaseModel):
    """Tuning parameters selected from training data"""
    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = 1
    split: Optional[CoordinateSplit] = None
    rank: int = Field(1, ge=1)
    threshold_const: float = Field(..., ge=0)
    alpha: float = Field(..., gt=0, lt=1)
    permutations: int = Field(..., ge=1)
    seed: int = 0
    gamma: float = Field(2.0, gt=0)
    window: int = Field(..., ge=2)
    basis_size: int = Field(..., ge=1)
    n_train: int = Field(..., ge=2)
    method: CalibrationMethod = "frobenius"
    block_length: Optional[int] = Field(None, ge=1, description="Block length of sequential shuffles")

    def detector_config(self, multiplier: float = 1.0) -> DetectorConfig:
        return DetectorConfig(
            gamma=self.gamma,
            split=self.split,
            rank=self.rank,
            window=self.window,
            threshold_const=self.threshold_const * multiplier,
            n_train=self.n_train,
        )


@dataclass
class DetectorSummary:
    """Table-1 style outcome of one detector over all replications"""
    detector: str
    false_alarm_rate: float
    correct_detection_rate: float
    no_alarm_rate: float
    add_mean: float
    add_sd: float
    alarm_times: List[Optional[int]] = field(default_factory=list)


@dataclass
class ExperimentReport:
    """Per-detector summaries keyed by detector label"""
    summaries: Dict[str, DetectorSummary] = field(default_factory=dict)
    change_at: Optional[int] = None
    n_total: Optional[int] = None

    def __getitem__(self, label: str) -> DetectorSummary:
        return self.summaries[label]


class CalibrationSection(BaseModel):
    """``calibration:`` section of a run config"""
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.05, gt=0, lt=1)
    permutations: int = Field(500, ge=1, description="Frobenius and baseline shuffles")
    method: CalibrationMethod = "sequential"
    horizon_permutations: int = Field(100, ge=1, description="Pseudo monitoring runs (sequential)")
    block_length: int = Field(10, ge=1, description="Windows moved together by a sequential shuffle")
    seed: int = 0
    report_path: Optional[str] = Field(None, description="Saved CalibrationReport to reuse")


class ExperimentSection(BaseModel):
    """``experiment:`` section of a run config"""
    model_config = ConfigDict(extra="forbid")

    replications: int = Field(100, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    multipliers: List[float] = Field(default_factory=default_multipliers)
    bench_steps: int = Field(11000, ge=10)


class OutputSection(BaseModel):
    """``output:`` section of a run config; file names are relative to ``dir``"""
    model_config = ConfigDict(extra="forbid")

    dir: str = "results"
    report: str = "report.csv"
    sweep: str = "sweep.csv"
    events: str = "events.csv"
    calibration: str = "calibration.yaml"


class DataSection(BaseModel):
    """``data:`` section describing an event CSV for calibrate/detect"""
    model_config = ConfigDict(extra="forbid")

    events_path: Optional[str] = None
    window_column: str = "window"
    coordinate_columns: Optional[List[str]] = None
    training_fraction: float = Field(0.5, gt=0, lt=1)
    bounds: Optional[List[Tuple[float, float]]] = Field(
        None, description="Fixed per-coordinate (min, max); None fits them on training rows"
    )
    restart_factor: float = Field(1.0, ge=1.0, description="Restart segment length in units of W")


class RunConfig(BaseModel):
    """Validated YAML run configuration (schema version 1)"""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    scenario: Scenario = Field(default_factory=Scenario)
    detector: DetectorSpec = Field(default_factory=lambda: DetectorSpec(kind="matrix"))
    baselines: List[DetectorSpec] = Field(default_factory=list)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: OutputSection = Field(default_factory=OutputSection)
    data: DataSection = Field(default_factory=DataSection)

    @field_validator("detector")
    @classmethod
    def _primary_detector(cls, detector: DetectorSpec) -> DetectorSpec:
        if detector.is_baseline:
            raise ValueError("the detector section must be 'matrix' or 'matrix_1d'")
        return detector

    @field_validator("baselines")
    @classmethod
    def _baseline_kinds(cls, baselines: List[DetectorSpec]) -> List[DetectorSpec]:
        for spec in baselines:
            if not spec.is_baseline:
                raise ValueError(f"baselines must be 'mmd' or 'kie', got {spec.kind!r}")
        return baselines

    def experiment_spec(self, seed: Optional[int] = None, workers: Optional[int] = None,
                        output_path: Optional[str] = None) -> ExperimentSpec:
        scenario = self.scenario
        if seed is not None:
            scenario = scenario.model_copy(update={"seed": seed})
        return ExperimentSpec(
            scenario=scenario,
            detectors=[self.detector] + list(self.baselines),
            replications=self.experiment.replications,
            alpha=self.calibration.alpha,
            permutations=self.calibration.permutations,
            calibration_method=self.calibration.method,
            horizon_permutations=self.calibration.horizon_permutations,
            block_length=self.calibration.block_length,
            seed=self.experiment.seed if seed is None else seed,
            workers=workers or self.experiment.workers,
            multipliers=self.experiment.multipliers,
            output_path=output_path,
        )
