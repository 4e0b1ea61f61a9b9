import io
import sys

import pandas as pd
import pytest
import yaml

from ppp_cpd.core.settings import load_run_config
from ppp_cpd.engines.embedding import RescaleStats
from ppp_cpd.orchestrator.main import (
    ALARM_HEADER,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    cli_main,
    load_training,
)

BASE_CONFIG = """
scenario:
  n_train: 40
  n_total: 70
  change_at: 55
  seed: 3
detector:
  window: 10
calibration:
  permutations: 20
experiment:
  replications: 2
  multipliers: [0.5, 1.0, 2.0]
output:
  dir: "{out}"
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(BASE_CONFIG.format(out=tmp_path / "out"))
    return path


def _lines(capsys):
    return [line for line in capsys.readouterr().out.splitlines() if line]


def _corner_rows(window_id, value, n=500):
    return f"{window_id},{value},{value},{value}\n" * n


def test_usage_errors(capsys):
    assert cli_main(["frobnicate"]) == EXIT_CONFIG
    assert cli_main(["simulate", "--no-such-flag"]) == EXIT_CONFIG
    assert cli_main(["--help"]) == EXIT_OK


def test_invalid_config_exit_code(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("calibration:\n  alpha: 3\n")
    assert cli_main(["calibrate", "--config", str(path)]) == EXIT_CONFIG
    assert cli_main(["calibrate", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_simulate_writes_event_file(config, tmp_path, capsys):
    assert cli_main(["simulate", "--config", str(config)]) == EXIT_OK
    target = tmp_path / "out" / "events.csv"
    assert _lines(capsys) == [str(target)]
    frame = pd.read_csv(target)
    assert list(frame.columns) == ["window", "x1", "x2", "x3"]
    assert frame["window"].min() == 1 and frame["window"].max() == 70


def test_calibrate_prints_and_saves(config, tmp_path, capsys):
    assert cli_main(["calibrate", "--config", str(config)]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == "metric,value"
    values = dict(line.split(",", 1) for line in lines[1:])
    assert values["window"] == "10"
    assert "|" in values["split"]
    assert (tmp_path / "out" / "calibration.yaml").exists()


def test_detect_with_empty_stream(config, monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO(""))
    assert cli_main(["detect", "--config", str(config)]) == EXIT_OK
    assert _lines(capsys) == []


def test_detect_reports_first_alarm(config, tmp_path, capsys):
    assert cli_main(["calibrate", "--config", str(config)]) == EXIT_OK
    capsys.readouterr()
    stream = tmp_path / "stream.csv"
    stream.write_text("window,x1,x2,x3\n" + _corner_rows(41, 0.05) + "42,0.5,0.5,0.5\n")
    code = cli_main(["detect", "--config", str(config), "--calibration", "calibration.yaml",
                     "--input", str(stream)])
    assert code == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == ALARM_HEADER
    assert len(lines) == 2
    assert lines[1].startswith("matrix,41,41,")


def test_detect_restarts_after_alarm(config, tmp_path, capsys):
    rows = _corner_rows(41, 0.05)
    for window_id in range(42, 52):
        rows += _corner_rows(window_id, 0.05)
    rows += _corner_rows(52, 0.95)
    stream = tmp_path / "stream.csv"
    stream.write_text("window,x1,x2,x3\n" + rows)
    assert cli_main(["detect", "--config", str(config), "--input", str(stream), "--restart"]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == ALARM_HEADER
    assert [line.split(",")[2] for line in lines[1:]] == ["41", "52"]


def test_detect_replays_recorded_stream(config, tmp_path, capsys):
    assert cli_main(["simulate", "--config", str(config)]) == EXIT_OK
    events = tmp_path / "out" / "events.csv"
    replay = tmp_path / "replay.yaml"
    replay.write_text(BASE_CONFIG.format(out=tmp_path / "out") + f"""
data:
  events_path: "{events}"
  training_fraction: 0.58
  bounds: [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]
""")
    capsys.readouterr()
    stream = tmp_path / "tail.csv"
    stream.write_text("window,x1,x2,x3\n" + _corner_rows(71, 0.05))
    assert cli_main(["detect", "--config", str(replay), "--input", str(stream)]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == ALARM_HEADER
    assert len(lines) == 2
    assert 41 <= int(lines[1].split(",")[2]) <= 71


def test_detect_input_errors(config, tmp_path):
    assert cli_main(["detect", "--config", str(config), "--input",
                     str(tmp_path / "absent.csv")]) == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("window,x1,x2,x3\nabc,0.1,0.1,0.1\n")
    assert cli_main(["detect", "--config", str(config), "--input", str(bad)]) == EXIT_RUNTIME


def test_bench(config, capsys):
    assert cli_main(["bench", "--config", str(config), "--steps", "22"]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == "metric,value"
    assert {line.split(",")[0] for line in lines[1:]} == {"early_median", "late_median", "ratio", "n_steps"}


def test_sweep_row_count(tmp_path, capsys):
    path = tmp_path / "sweep.yaml"
    path.write_text(BASE_CONFIG.format(out=tmp_path / "out") + """
baselines:
  - kind: kie
    window: 5
    grid_res: 4
""")
    assert cli_main(["sweep", "--config", str(path)]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == "detector,multiplier,fap,add"
    assert len(lines) == 1 + 3 * 2
    assert (tmp_path / "out" / "sweep.csv").exists()


def test_experiment_table_and_report(config, tmp_path, capsys):
    assert cli_main(["experiment", "--config", str(config), "--seed", "5"]) == EXIT_OK
    lines = _lines(capsys)
    assert lines[0].startswith("Detector")
    assert lines[2].startswith("matrix")
    assert (tmp_path / "out" / "report.csv").exists()


def _scaled_events(config, tmp_path, factor=10.0):
    """Simulated event file with every coordinate multiplied by ``factor``"""
    assert cli_main(["simulate", "--config", str(config)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "out" / "events.csv")
    for column in ["x1", "x2", "x3"]:
        frame[column] = frame[column] * factor
    target = tmp_path / "scaled.csv"
    frame.to_csv(target, index=False)
    return target


def _csv_config(tmp_path, events, training_fraction=0.58, name="csv.yaml"):
    path = tmp_path / name
    path.write_text(BASE_CONFIG.format(out=tmp_path / "out") + f"""
data:
  events_path: "{events}"
  training_fraction: {training_fraction}
""")
    return path


def test_detect_against_csv_calibration(config, tmp_path, capsys):
    events = _scaled_events(config, tmp_path)
    csv_config = _csv_config(tmp_path, events)
    assert cli_main(["calibrate", "--config", str(csv_config)]) == EXIT_OK
    saved = yaml.safe_load((tmp_path / "out" / "calibration.yaml").read_text())
    assert saved["n_train"] == 40
    assert saved["method"] == "sequential"
    assert max(saved["rescale"]["maxs"]) > 5.0
    capsys.readouterr()

    tail = tmp_path / "tail.csv"
    tail.write_text("window,x1,x2,x3\n" + _corner_rows(71, 0.5))
    code = cli_main(["detect", "--config", str(csv_config), "--calibration", "calibration.yaml",
                     "--input", str(tail)])
    assert code == EXIT_OK
    lines = _lines(capsys)
    assert lines[0] == ALARM_HEADER
    assert len(lines) == 2
    assert 41 <= int(lines[1].split(",")[2]) <= 71


def test_load_training_uses_saved_rescale(config, tmp_path):
    events = _scaled_events(config, tmp_path)
    cfg = load_run_config(str(_csv_config(tmp_path, events)))
    saved = RescaleStats(mins=(0.0, 0.0, 0.0), maxs=(20.0, 20.0, 20.0))
    data = load_training(cfg, saved)
    assert data.stats == saved
    assert len(data.training) == 40
    assert max(w.points.max() for w in data.training if w.size) <= 0.5 + 1e-12


def test_detect_rejects_mismatched_calibration(config, tmp_path, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO(""))
    events = _scaled_events(config, tmp_path)
    csv_config = _csv_config(tmp_path, events)
    assert cli_main(["calibrate", "--config", str(csv_config), "--out", "csv_cal.yaml"]) == EXIT_OK
    # fitted on the event file, detect configured on the simulated scenario
    assert cli_main(["detect", "--config", str(config), "--calibration", "csv_cal.yaml"]) == EXIT_CONFIG

    assert cli_main(["calibrate", "--config", str(config)]) == EXIT_OK
    short = _csv_config(tmp_path, events, training_fraction=0.5, name="short.yaml")
    # 40 training windows at calibration, 35 from the event file
    assert cli_main(["detect", "--config", str(short), "--calibration", "calibration.yaml"]) == EXIT_CONFIG
