"""
Command-line entry point for ppp_cpd

Subcommands: simulate, calibrate, detect, bench, sweep, experiment. Exit
codes: 0 on success, 2 on configuration or usage errors, 3 on runtime
errors. Logs go to stderr; records and tables go to stdout.
"""
import argparse
import math
import sys
from dataclasses import dataclass
from itertools import chain
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, TextIO, Tuple

import structlog

from ..core.errors import ConfigurationError, PPPCDError
from ..core.logging_setup import setup_logging
from ..core.settings import load_run_config, settings
from ..domain.models import CalibrationReport, CoordinateSplit, DetectorConfig, PointWindow, RunConfig
from ..adapters.events_csv import EventStreamReader, dump_events, ingest_events
from ..engines.detector import make_detector
from ..engines.embedding import RescaleStats
from ..engines.metrics import format_table
from ..services.calibration_service import calibrate
from ..services.experiment_service import bench_steps, run_experiment, sweep_thresholds
from ..services.simulation_service import generate
from ..stores.report_store import ReportStore

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ALARM_HEADER = "detector,time,window_id,offset,score,threshold"


@dataclass
class TrainingData:
    """Training windows plus any recorded stream windows that follow them"""
    training: List[PointWindow]
    stream: List[PointWindow]
    stream_ids: List[int]
    stats: RescaleStats
    last_id: Optional[int]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config YAML (path or packaged name)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--workers", type=int, help="parallel replications")
    common.add_argument("--out", help="output file")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="ppp-cpd",
                                     description="Online change detection for PPP time series")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="generate a scenario stream as an event CSV")
    sub.add_parser("calibrate", parents=[common], help="select split, rank and threshold constant")

    detect = sub.add_parser("detect", parents=[common], help="run the detector on an event stream")
    detect.add_argument("--calibration", help="saved calibration YAML to reuse")
    detect.add_argument("--input", default="-", help="event CSV to stream, '-' for stdin")
    detect.add_argument("--restart", action="store_true",
                        help="reset after each alarm and keep detecting")

    bench = sub.add_parser("bench", parents=[common], help="time detector steps")
    bench.add_argument("--steps", type=int, help="number of timed steps")

    sub.add_parser("sweep", parents=[common], help="FAP/ADD over threshold multipliers")
    sub.add_parser("experiment", parents=[common], help="Monte Carlo detection table")
    return parser


def _seeded(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return cfg
    return cfg.model_copy(update={
        "scenario": cfg.scenario.model_copy(update={"seed": seed}),
        "calibration": cfg.calibration.model_copy(update={"seed": seed}),
        "experiment": cfg.experiment.model_copy(update={"seed": seed}),
    })


def _workers(cfg: RunConfig, requested: Optional[int]) -> int:
    workers = requested or settings.workers or cfg.experiment.workers
    if workers < 1:
        raise ConfigurationError(f"--workers must be >= 1, got {workers}")
    return workers


def _store(cfg: RunConfig) -> ReportStore:
    return ReportStore(cfg.output.dir)


def load_training(cfg: RunConfig, rescale: Optional[RescaleStats] = None) -> TrainingData:
    """Training windows from the configured event file, else from the scenario.

    ``rescale`` replaces the configured bounds, so a saved calibration sees
    coordinates mapped exactly as they were when it was fitted.
    """
    data = cfg.data
    if data.events_path:
        bounds = data.bounds if rescale is None else list(zip(rescale.mins, rescale.maxs))
        ingested = ingest_events(data.events_path, data.window_column, data.coordinate_columns,
                                 data.training_fraction, bounds)
        return TrainingData(
            training=ingested.training,
            stream=ingested.stream,
            stream_ids=ingested.window_ids[ingested.n_train:],
            stats=ingested.stats,
            last_id=ingested.last_window_id,
        )
    generated = generate(cfg.scenario)
    dim = generated.windows[0].dim
    return TrainingData(
        training=generated.training,
        stream=[],
        stream_ids=[],
        stats=RescaleStats(mins=(0.0,) * dim, maxs=(1.0,) * dim),
        last_id=None,
    )


def calibrate_from_config(cfg: RunConfig, training: Sequence[PointWindow]) -> CalibrationReport:
    spec = cfg.detector
    return calibrate(
        training,
        window=spec.window,
        gamma=spec.gamma,
        alpha=cfg.calibration.alpha,
        permutations=cfg.calibration.permutations,
        seed=cfg.calibration.seed,
        split=spec.split,
        rank=spec.rank,
        one_dimensional=spec.kind == "matrix_1d",
        method=cfg.calibration.method,
        horizon_permutations=cfg.calibration.horizon_permutations,
        block_length=cfg.calibration.block_length,
    )


def cmd_simulate(cfg: RunConfig, args) -> int:
    generated = generate(cfg.scenario)
    target = dump_events(generated.windows, _store(cfg).path(args.out or cfg.output.events))
    print(target)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    data = load_training(cfg)
    report = calibrate_from_config(cfg, data.training)
    target = _store(cfg).save_calibration(report, args.out or cfg.output.calibration, data.stats)
    print("metric,value")
    for key, value in report.model_dump(mode="json").items():
        if key == "split":
            value = "" if value is None else (" ".join(map(str, value["group_y"])) + "|"
                                                 + " ".join(map(str, value["group_z"])))
        print(f"{key},{value}")
    print(f"path,{target}")
    return EXIT_OK


def _open_input(name: str) -> TextIO:
    if name == "-":
        return sys.stdin
    path = Path(name)
    if not path.exists():
        raise ConfigurationError(f"input file not found: {path}")
    return open(path, "r")


def _print_alarm(report, window_id: int, printed: bool) -> bool:
    if not printed:
        print(ALARM_HEADER)
    print(f"{report.detector},{report.time},{window_id},{report.offset},"
          f"{report.score!r},{report.threshold!r}", flush=True)
    return True


def _is_unit_cube(stats: RescaleStats) -> bool:
    return all(low == 0.0 for low in stats.mins) and all(high == 1.0 for high in stats.maxs)


def check_calibration_source(cfg: RunConfig, report: CalibrationReport,
                             rescale: Optional[RescaleStats], data: TrainingData) -> None:
    """Raise ConfigurationError unless ``data`` is the training source the report was fitted on"""
    dim = data.training[0].dim
    expected_dim = 1 if report.split is None else report.split.dim
    if dim != expected_dim:
        raise ConfigurationError(
            f"calibration expects {expected_dim} coordinates, training source has {dim}"
        )
    if len(data.training) != report.n_train:
        raise ConfigurationError(
            f"calibration was fitted on {report.n_train} training windows, "
            f"the configured source gives {len(data.training)}"
        )
    if rescale is None:
        return
    if rescale.dim != dim:
        raise ConfigurationError(f"saved rescale has {rescale.dim} coordinates, training has {dim}")
    if not cfg.data.events_path and not _is_unit_cube(rescale):
        raise ConfigurationError("calibration was fitted on an event file; set data.events_path to it")


def cmd_detect(cfg: RunConfig, args) -> int:
    calibration_path = args.calibration or cfg.calibration.report_path
    if calibration_path:
        report, rescale = _store(cfg).load_calibration(calibration_path)
        data = load_training(cfg, rescale)
        check_calibration_source(cfg, report, rescale, data)
    else:
        data = load_training(cfg)
        report = calibrate_from_config(cfg, data.training)

    detector = make_detector(report.detector_config())
    state = detector.init(data.training)
    restart_length = math.ceil(report.window * cfg.data.restart_factor)

    source = _open_input(args.input)
    try:
        reader = EventStreamReader(
            source,
            data.stats,
            next_index=len(data.training) + len(data.stream) + 1,
            last_id=data.last_id,
            window_column=cfg.data.window_column,
            coordinate_columns=cfg.data.coordinate_columns,
        )
        windows: Iterator[Tuple[int, PointWindow]] = chain(zip(data.stream_ids, data.stream), reader)
        printed = False
        alarms = 0
        for window_id, window in windows:
            alarm = detector.step(state, window)
            if alarm is None:
                continue
            alarms += 1
            printed = _print_alarm(alarm, window_id, printed)
            if not args.restart:
                break
            restart = [w for _, w in _take(windows, restart_length)]
            if len(restart) < restart_length:
                logger.warning("Stream ended before the restart segment was complete",
                               collected=len(restart), needed=restart_length)
                break
            state = detector.reset_after_alarm(state, restart)
        logger.info("Detection finished", alarms=alarms, last_time=state.j)
    finally:
        if source is not sys.stdin:
            source.close()
    return EXIT_OK


def _take(iterator: Iterator, n: int) -> List:
    items = []
    for item in iterator:
        items.append(item)
        if len(items) == n:
            break
    return items


def cmd_bench(cfg: RunConfig, args) -> int:
    n_steps = args.steps or cfg.experiment.bench_steps
    detector_cfg = DetectorConfig(split=CoordinateSplit.default(3), rank=cfg.detector.rank or 1,
                                  window=cfg.detector.window, gamma=cfg.detector.gamma,
                                  threshold_const=1e18)
    result = bench_steps(detector_cfg, n_steps=n_steps, seed=cfg.scenario.seed,
                         n_train=max(cfg.detector.window, min(cfg.scenario.n_train, 1000)))
    lines = ["metric,value"] + [f"{key},{value}" for key, value in result.to_dict().items()]
    print("\n".join(lines))
    if args.out:
        target = _store(cfg).path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    spec = cfg.experiment_spec(workers=_workers(cfg, args.workers))
    frame = sweep_thresholds(spec)
    _store(cfg).write_sweep(frame, args.out or cfg.output.sweep)
    print(frame.to_csv(index=False), end="")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    spec = cfg.experiment_spec(workers=_workers(cfg, args.workers))
    report = run_experiment(spec)
    _store(cfg).write_report(report, args.out or cfg.output.report)
    print(format_table(report))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "experiment": cmd_experiment,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    try:
        setup_logging(args.log_level)
        cfg = _seeded(load_run_config(args.config), args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as e:
        logger.error("Configuration error", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PPPCDError as e:
        logger.error("Command failed", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("Unexpected failure", command=args.command, error=str(e),
                     error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
