"""
Experiment Service for ppp_cpd

Monte Carlo orchestration: one replication generates a stream, calibrates
every detector on its training prefix and records a per-step ratio trace
(max score / threshold). Alarm times for any threshold multiplier are read
off the traces, so the plain experiment and the threshold sweep share one
detection pass per stream.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from ..core.errors import ConfigurationError, ExperimentError
from ..domain.models import (
    BaselineConfig,
    CoordinateSplit,
    DetectorConfig,
    DetectorSpec,
    ExperimentReport,
    ExperimentSpec,
    PointWindow,
    Scenario,
)
from ..engines.baselines import make_baseline
from ..engines.detector import make_detector
from ..engines.embedding import embed_window, population_matrix
from ..engines.lowrank import operator_norm
from ..engines.metrics import aggregate, alarm_time_from_ratios, sweep_point
from .calibration_service import calibrate, calibrate_baseline
from .simulation_service import PPPSimulator, pre_intensity_3d, stationary_mean_3d

logger = structlog.get_logger(__name__)

SWEEP_COLUMNS = ["detector", "multiplier", "fap", "add"]


@dataclass
class ReplicationResult:
    """Ratio traces and calibrated settings of one replication"""
    index: int
    first_time: int
    ratio_traces: Dict[str, np.ndarray] = field(repr=False)
    calibrations: Dict[str, object] = field(default_factory=dict)

    def alarm_time(self, label: str, multiplier: float = 1.0) -> Optional[int]:
        return alarm_time_from_ratios(self.ratio_traces[label], multiplier, self.first_time)


def calibration_seed(seed: int, replication: int) -> int:
    """Permutation seed of one replication, independent of the stream seeds"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(replication, 1))
    return int(sequence.generate_state(1)[0])


def trace_matrix_detector(spec: DetectorSpec, training: Sequence[PointWindow],
                          stream: Sequence[PointWindow], experiment: ExperimentSpec, seed: int):
    report = calibrate(
        training,
        window=spec.window,
        gamma=spec.gamma,
        alpha=experiment.alpha,
        permutations=experiment.permutations,
        seed=seed,
        split=spec.split,
        rank=spec.rank,
        one_dimensional=spec.kind == "matrix_1d",
        method=experiment.calibration_method,
        horizon_permutations=experiment.horizon_permutations,
        block_length=experiment.block_length,
    )
    detector = make_detector(report.detector_config())
    state = detector.init(training)
    return detector.ratio_trace(state, stream), report


def trace_baseline(spec: DetectorSpec, training: Sequence[PointWindow],
                   stream: Sequence[PointWindow], dim: int, alpha: float, permutations: int,
                   seed: int):
    cfg = BaselineConfig(
        kind=spec.kind,
        bandwidth=spec.bandwidth,
        grid_res=spec.grid_res,
        window=spec.window,
        max_block_points=spec.max_block_points,
        seed=seed,
    )
    detector = make_baseline(cfg, dim)
    threshold = calibrate_baseline(training, detector, alpha, permutations, seed)
    state = detector.init(training)
    return detector.ratio_trace(state, stream), threshold


def run_replication(spec: ExperimentSpec, index: int) -> ReplicationResult:
    """Generate, calibrate and trace every detector for replication ``index``"""
    try:
        simulator = PPPSimulator(spec.scenario)
        generated = simulator.generate(index)
        training, stream = generated.training, generated.stream
        seed = calibration_seed(spec.seed, index)

        traces: Dict[str, np.ndarray] = {}
        calibrations: Dict[str, object] = {}
        for detector_spec in spec.detectors:
            if detector_spec.is_baseline:
                trace, setting = trace_baseline(detector_spec, training, stream, simulator.dim,
                                                spec.alpha, spec.permutations, seed)
            else:
                trace, setting = trace_matrix_detector(detector_spec, training, stream, spec, seed)
            traces[detector_spec.label] = trace
            calibrations[detector_spec.label] = setting

        result = ReplicationResult(index=index, first_time=spec.scenario.n_train + 1,
                                   ratio_traces=traces, calibrations=calibrations)
        logger.debug("Replication complete", replication=index,
                     alarms={label: result.alarm_time(label) for label in traces})
        return result
    except Exception as e:
        logger.error("Replication failed", replication=index, error=str(e))
        raise ExperimentError(str(e), replication=index) from e


def _run_indexed(args) -> ReplicationResult:
    spec, index = args
    return run_replication(spec, index)


def run_replications(spec: ExperimentSpec, workers: Optional[int] = None) -> List[ReplicationResult]:
    """All replications, ordered by index whatever the worker count"""
    workers = workers or spec.workers
    jobs = [(spec, i) for i in range(spec.replications)]
    logger.info("Running experiment", scenario=spec.scenario.kind,
                replications=spec.replications, workers=workers,
                detectors=[d.label for d in spec.detectors])
    if workers <= 1:
        return [_run_indexed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_indexed, jobs))


def report_from_results(spec: ExperimentSpec, results: Sequence[ReplicationResult],
                        multiplier: float = 1.0) -> ExperimentReport:
    alarm_times = {
        d.label: [r.alarm_time(d.label, multiplier) for r in results] for d in spec.detectors
    }
    return aggregate(alarm_times, spec.scenario.change_at, spec.scenario.n_total)


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> ExperimentReport:
    results = run_replications(spec, workers)
    report = report_from_results(spec, results)
    for label, summary in report.summaries.items():
        logger.info("Detector summary", detector=label,
                    false_alarm_rate=summary.false_alarm_rate,
                    correct_detection_rate=summary.correct_detection_rate,
                    no_alarm_rate=summary.no_alarm_rate,
                    add_mean=summary.add_mean, add_sd=summary.add_sd)
    return report


def sweep_thresholds(spec: ExperimentSpec, multipliers: Optional[Sequence[float]] = None,
                     results: Optional[Sequence[ReplicationResult]] = None,
                     workers: Optional[int] = None) -> pd.DataFrame:
    """(FAP, ADD) per detector and threshold multiplier.

    Reuses the streams and calibrations of ``results`` when given.
    """
    change_at = spec.scenario.change_at
    if change_at is None:
        raise ConfigurationError("a threshold sweep needs a scenario with a planted change")
    multipliers = list(spec.multipliers if multipliers is None else multipliers)
    if multipliers != sorted(multipliers):
        raise ConfigurationError("multipliers must be sorted ascending")
    if results is None:
        results = run_replications(spec, workers)

    rows = []
    for detector_spec in spec.detectors:
        label = detector_spec.label
        for multiplier in multipliers:
            times = [r.alarm_time(label, multiplier) for r in results]
            fap, add = sweep_point(times, change_at, spec.scenario.n_total)
            rows.append({"detector": label, "multiplier": float(multiplier), "fap": fap, "add": add})
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def deviation_curve(ns: Sequence[int], replications: int = 50, seed: int = 0, M: int = 3,
                    split: Optional[CoordinateSplit] = None) -> Dict[int, float]:
    """Mean ||n^-1 sum of embeddings - population matrix||_op for each n.

    Uses the stationary 3D latent stream without a change; the population
    matrix is that of the pre-change family at the stationary latent mean.
    """
    ns = sorted(int(n) for n in ns)
    split = split or CoordinateSplit.default(3)
    scenario = Scenario(kind="scenario_3d", n_train=2, n_total=max(ns[-1], 3),
                        change_at=None, seed=seed)
    target = population_matrix(pre_intensity_3d(stationary_mean_3d()), split, M)
    deviations = {n: [] for n in ns}
    simulator = PPPSimulator(scenario)
    for replication in range(replications):
        windows = simulator.generate(replication).windows
        running = np.zeros_like(target)
        count = 0
        for n in ns:
            for w in windows[count:n]:
                running += embed_window(w, split, M)
            count = n
            deviations[n].append(operator_norm(running / n - target))
    curve = {n: float(np.mean(values)) for n, values in deviations.items()}
    logger.info("Deviation curve", curve=curve, replications=replications)
    return curve


@dataclass
class BenchResult:
    """Median per-step latency (seconds) early and late in a long stream"""
    early_median: float
    late_median: float
    n_steps: int

    @property
    def ratio(self) -> float:
        return self.late_median / self.early_median if self.early_median > 0 else float("inf")

    def to_dict(self) -> Dict[str, float]:
        return {
            "early_median": self.early_median,
            "late_median": self.late_median,
            "ratio": self.ratio,
            "n_steps": self.n_steps,
        }


def bench_steps(cfg: Optional[DetectorConfig] = None, n_steps: int = 11000, seed: int = 0,
                n_train: int = 1000) -> BenchResult:
    """Time detector steps on a no-change 3D stream.

    The early block is steps [n/11, 2n/11) and the late block the last n/11
    steps, i.e. [1000, 2000) and [10000, 11000) for n = 11000.
    """
    if n_steps < 11:
        raise ConfigurationError(f"bench needs at least 11 steps, got {n_steps}")
    if cfg is None:
        cfg = DetectorConfig(split=CoordinateSplit.default(3), rank=1, window=100,
                             threshold_const=1e18)
    scenario = Scenario(kind="scenario_3d", n_train=n_train, n_total=n_train + n_steps,
                        change_at=None, seed=seed)
    generated = PPPSimulator(scenario).generate(0)
    detector = make_detector(cfg)
    state = detector.init(generated.training)

    latencies = np.empty(n_steps)
    for i, window in enumerate(generated.stream):
        start = time.perf_counter()
        detector.advance(state, window)
        latencies[i] = time.perf_counter() - start

    block = n_steps // 11
    result = BenchResult(
        early_median=float(np.median(latencies[block: 2 * block])),
        late_median=float(np.median(latencies[n_steps - block:])),
        n_steps=n_steps,
    )
    logger.info("Bench complete", **result.to_dict())
    return result
