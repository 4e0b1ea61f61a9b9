import pytest

from ppp_cpd.core.errors import ConfigurationError
from ppp_cpd.core.logging_setup import setup_logging
from ppp_cpd.core.settings import load_run_config, merge_sections, settings


def _yaml(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return path


def test_defaults():
    cfg = load_run_config()
    assert cfg.scenario.kind == "scenario_3d"
    assert (cfg.scenario.n_train, cfg.scenario.n_total, cfg.scenario.change_at) == (1000, 1500, 1200)
    assert cfg.detector.kind == "matrix"
    assert cfg.detector.window == 100
    assert cfg.baselines == []
    assert cfg.calibration.alpha == 0.05
    assert cfg.calibration.permutations == 500
    assert cfg.experiment.bench_steps == 11000
    assert len(cfg.experiment.multipliers) == 15


@pytest.mark.parametrize(
    "name,kind,labels",
    [
        ("experiment_3d", "scenario_3d", ["matrix", "mmd", "kie"]),
        ("experiment_4d.yaml", "scenario_4d", ["matrix", "mmd", "kie"]),
        ("experiment_1d", "scenario_1d", ["matrix_1d"]),
    ],
)
def test_packaged_configs(name, kind, labels):
    cfg = load_run_config(name)
    assert cfg.scenario.kind == kind
    spec = cfg.experiment_spec()
    assert [d.label for d in spec.detectors] == labels


def test_file_overrides_merge_with_defaults(tmp_path):
    path = _yaml(tmp_path, "scenario:\n  n_train: 50\n  n_total: 100\n  change_at: 80\n"
                           "calibration:\n  permutations: 20\n")
    cfg = load_run_config(path)
    assert cfg.scenario.n_train == 50
    assert cfg.scenario.kind == "scenario_3d"
    assert cfg.calibration.permutations == 20
    assert cfg.calibration.alpha == 0.05


def test_experiment_spec_seed_override():
    spec = load_run_config().experiment_spec(seed=7, workers=3)
    assert spec.seed == 7
    assert spec.scenario.seed == 7
    assert spec.workers == 3


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("bogus: 1\n", "unknown top-level keys"),
        ("schema_version: 2\n", "unsupported schema_version"),
        ("calibration:\n  alpha: 2.0\n", "calibration.alpha"),
        ("detector:\n  kind: mmd\n", "detector"),
        ("baselines:\n  - kind: matrix\n", "baselines"),
        ("scenario:\n  typo_field: 3\n", "scenario.typo_field"),
        ("- 1\n- 2\n", "mapping"),
        ("scenario: [unclosed\n", "Invalid YAML"),
    ],
)
def test_invalid_configs(tmp_path, text, fragment):
    with pytest.raises(ConfigurationError) as excinfo:
        load_run_config(_yaml(tmp_path, text))
    assert fragment in str(excinfo.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "absent.yaml")
    with pytest.raises(ConfigurationError):
        load_run_config("no_such_packaged_config")


def test_merge_sections_replaces_lists():
    defaults = {"schema_version": 1, "scenario": {"n_train": 10, "seed": 0},
                "baselines": [{"kind": "mmd"}]}
    merged = merge_sections(defaults, {"scenario": {"seed": 4}, "baselines": []})
    assert merged["scenario"] == {"n_train": 10, "seed": 4}
    assert merged["baselines"] == []
    assert merged["schema_version"] == 1


def test_worker_environment(monkeypatch):
    monkeypatch.delenv("PPP_CPD_WORKERS", raising=False)
    assert settings.workers is None
    monkeypatch.setenv("PPP_CPD_WORKERS", "3")
    assert settings.workers == 3
    for bad in ("0", "many"):
        monkeypatch.setenv("PPP_CPD_WORKERS", bad)
        with pytest.raises(ConfigurationError):
            settings.workers


def test_log_level_environment(monkeypatch):
    monkeypatch.delenv("PPP_CPD_LOG_LEVEL", raising=False)
    assert settings.log_level == "INFO"
    monkeypatch.setenv("PPP_CPD_LOG_LEVEL", "DEBUG")
    assert settings.log_level == "DEBUG"
    setup_logging()
    setup_logging("warning")
