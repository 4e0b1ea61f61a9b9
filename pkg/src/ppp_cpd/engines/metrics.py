"""
Outcome classification and Monte Carlo aggregation.

An alarm at or before the change is a false alarm, an alarm in
(change_at, n_total] is a correct detection, and no alarm within the
horizon counts as no alarm. Delays are averaged over correct detections only.
"""
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..domain.models import DetectorSummary, ExperimentReport

logger = structlog.get_logger(__name__)


class Outcome(str, Enum):
    FALSE_ALARM = "false_alarm"
    CORRECT = "correct"
    NO_ALARM = "no_alarm"


def classify_outcome(alarm_time: Optional[int], change_at: Optional[int], n_total: int) -> Outcome:
    """Total over alarm times; ``change_at`` None means no planted change"""
    if alarm_time is None or alarm_time > n_total:
        return Outcome.NO_ALARM
    if change_at is None or alarm_time <= change_at:
        return Outcome.FALSE_ALARM
    return Outcome.CORRECT


def summarize(detector: str, alarm_times: Sequence[Optional[int]], change_at: Optional[int],
              n_total: int) -> DetectorSummary:
    """Rates and delay statistics of one detector over all replications"""
    alarm_times = list(alarm_times)
    if not alarm_times:
        raise ValueError("summarize needs at least one replication")
    outcomes = [classify_outcome(t, change_at, n_total) for t in alarm_times]
    total = len(outcomes)
    delays = [t - change_at for t, o in zip(alarm_times, outcomes) if o is Outcome.CORRECT]

    if delays:
        add_mean = float(np.mean(delays))
        add_sd = float(np.std(delays, ddof=1)) if len(delays) > 1 else 0.0
    else:
        add_mean = add_sd = float("nan")

    return DetectorSummary(
        detector=detector,
        false_alarm_rate=outcomes.count(Outcome.FALSE_ALARM) / total,
        correct_detection_rate=outcomes.count(Outcome.CORRECT) / total,
        no_alarm_rate=outcomes.count(Outcome.NO_ALARM) / total,
        add_mean=add_mean,
        add_sd=add_sd,
        alarm_times=alarm_times,
    )


def aggregate(alarm_times: Dict[str, Sequence[Optional[int]]], change_at: Optional[int],
              n_total: int) -> ExperimentReport:
    report = ExperimentReport(change_at=change_at, n_total=n_total)
    for label, times in alarm_times.items():
        report.summaries[label] = summarize(label, times, change_at, n_total)
    return report


def alarm_time_from_ratios(ratios: np.ndarray, multiplier: float, first_time: int) -> Optional[int]:
    """Alarm time under a scaled threshold, from a per-step ratio trace.

    ``ratios[i]`` belongs to window ``first_time + i``; the detector with
    threshold multiplier c alarms at the first ratio strictly above c.
    """
    hits = np.flatnonzero(np.asarray(ratios) > multiplier)
    return None if hits.size == 0 else first_time + int(hits[0])


def sweep_point(alarm_times: Sequence[Optional[int]], change_at: int,
                n_total: int) -> Tuple[float, float]:
    """(FAP, ADD) of one threshold setting.

    FAP is the share of replications alarming at or before the change. ADD
    averages over the remaining replications, with a missed change counted
    as a delay of n_total - change_at.
    """
    outcomes = [classify_outcome(t, change_at, n_total) for t in alarm_times]
    fap = outcomes.count(Outcome.FALSE_ALARM) / len(outcomes)
    delays: List[float] = []
    for t, outcome in zip(alarm_times, outcomes):
        if outcome is Outcome.CORRECT:
            delays.append(t - change_at)
        elif outcome is Outcome.NO_ALARM:
            delays.append(n_total - change_at)
    add = float(np.mean(delays)) if delays else float("nan")
    return fap, add


def format_table(report: ExperimentReport) -> str:
    """Fixed-width table: integer percentages and ADD (SD) to two decimals"""
    header = f"{'Detector':<12}{'False Alarm':>13}{'Correct Detection':>19}{'No Alarm':>10}{'ADD (SD)':>18}"
    lines = [header, "-" * len(header)]
    for label, s in report.summaries.items():
        if np.isnan(s.add_mean):
            add = "-"
        else:
            add = f"{s.add_mean:.2f} ({s.add_sd:.2f})"
        lines.append(
            f"{label:<12}"
            f"{round(100 * s.false_alarm_rate):>12d}%"
            f"{round(100 * s.correct_detection_rate):>18d}%"
            f"{round(100 * s.no_alarm_rate):>9d}%"
            f"{add:>18}"
        )
    return "\n".join(lines)
