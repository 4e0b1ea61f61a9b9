"""Report store for ppp_cpd: calibration YAML, experiment and sweep CSV files"""
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd
import structlog
import yaml
from pydantic import ValidationError

from ..core.errors import ConfigurationError, PPPCDError
from ..domain.models import CalibrationReport, DetectorSummary, ExperimentReport
from ..engines.embedding import RescaleStats

logger = structlog.get_logger(__name__)

REPORT_COLUMNS = ["detector", "metric", "value"]
SWEEP_COLUMNS = ["detector", "multiplier", "fap", "add"]
SUMMARY_METRICS = ["false_alarm_rate", "correct_detection_rate", "no_alarm_rate", "add_mean", "add_sd"]
# detector label of the rows carrying experiment-level fields
EXPERIMENT_ROW = "*"


def _format(value: Optional[float]) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def _parse_float(text: str) -> float:
    return float(text) if text != "" else float("nan")


def _parse_int(text: str) -> Optional[int]:
    return int(text) if text != "" else None


class ReportStore:
    """File persistence rooted at an output directory"""

    def __init__(self, output_dir: Union[str, Path] = "results"):
        self.output_dir = Path(output_dir)

    def path(self, name: Union[str, Path]) -> Path:
        """Absolute paths pass through; relative names resolve under output_dir"""
        candidate = Path(name)
        return candidate if candidate.is_absolute() else self.output_dir / candidate

    def _prepare(self, name: Union[str, Path]) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    # calibration

    def save_calibration(self, report: CalibrationReport, name: Union[str, Path] = "calibration.yaml",
                         rescale: Optional[RescaleStats] = None) -> Path:
        target = self._prepare(name)
        document: Dict[str, Any] = report.model_dump(mode="json")
        if rescale is not None:
            document["rescale"] = rescale.to_dict()
        try:
            with open(target, "w") as f:
                yaml.safe_dump(document, f, sort_keys=False)
        except OSError as e:
            logger.error("Failed to save calibration", path=str(target), error=str(e))
            raise PPPCDError(f"Failed to save calibration: {e}")
        logger.info("Saved calibration", path=str(target))
        return target

    def load_calibration(self, name: Union[str, Path]) -> Tuple[CalibrationReport, Optional[RescaleStats]]:
        source = self.path(name)
        if not source.exists():
            raise ConfigurationError(f"Calibration file not found: {source}")
        with open(source, "r") as f:
            try:
                document = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Invalid YAML in {source}: {e}")
        rescale_doc = document.pop("rescale", None)
        try:
            report = CalibrationReport.model_validate(document)
        except ValidationError as e:
            raise ConfigurationError(f"{source}: invalid calibration report: {e}")
        rescale = None
        if rescale_doc is not None:
            rescale = RescaleStats(mins=tuple(rescale_doc["mins"]), maxs=tuple(rescale_doc["maxs"]))
        logger.info("Loaded calibration", path=str(source), threshold_const=report.threshold_const)
        return report, rescale

    # experiment report

    def report_frame(self, report: ExperimentReport) -> pd.DataFrame:
        rows: List[Dict[str, str]] = [
            {"detector": EXPERIMENT_ROW, "metric": "change_at", "value": _format(report.change_at)},
            {"detector": EXPERIMENT_ROW, "metric": "n_total", "value": _format(report.n_total)},
        ]
        for label, summary in report.summaries.items():
            for metric in SUMMARY_METRICS:
                rows.append({"detector": label, "metric": metric,
                             "value": _format(getattr(summary, metric))})
            for i, t in enumerate(summary.alarm_times):
                rows.append({"detector": label, "metric": f"alarm_time[{i}]", "value": _format(t)})
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def write_report(self, report: ExperimentReport, name: Union[str, Path] = "report.csv") -> Path:
        target = self._prepare(name)
        self.report_frame(report).to_csv(target, index=False)
        logger.info("Wrote experiment report", path=str(target), detectors=list(report.summaries))
        return target

    def read_report(self, name: Union[str, Path] = "report.csv") -> ExperimentReport:
        source = self.path(name)
        frame = pd.read_csv(source, dtype=str, keep_default_na=False)
        if list(frame.columns) != REPORT_COLUMNS:
            raise ConfigurationError(f"{source}: expected columns {REPORT_COLUMNS}")

        report = ExperimentReport()
        fields: Dict[str, Dict[str, float]] = {}
        alarms: Dict[str, Dict[int, Optional[int]]] = {}
        for detector, metric, value in frame.itertuples(index=False):
            if detector == EXPERIMENT_ROW:
                setattr(report, metric, _parse_int(value))
            elif metric.startswith("alarm_time["):
                alarms.setdefault(detector, {})[int(metric[len("alarm_time["):-1])] = _parse_int(value)
            else:
                fields.setdefault(detector, {})[metric] = _parse_float(value)

        for detector, values in fields.items():
            times = alarms.get(detector, {})
            report.summaries[detector] = DetectorSummary(
                detector=detector,
                alarm_times=[times[i] for i in sorted(times)],
                **values,
            )
        return report

    # sweep

    def write_sweep(self, frame: pd.DataFrame, name: Union[str, Path] = "sweep.csv") -> Path:
        target = self._prepare(name)
        frame[SWEEP_COLUMNS].to_csv(target, index=False, float_format="%.17g")
        logger.info("Wrote sweep", path=str(target), rows=len(frame))
        return target

    def read_sweep(self, name: Union[str, Path] = "sweep.csv") -> pd.DataFrame:
        return pd.read_csv(self.path(name))
